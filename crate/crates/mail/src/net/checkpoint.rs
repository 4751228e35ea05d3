//! Flat binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "MCK1"
//! version  u32      1
//! count    u64      number of tensors
//! per tensor:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, extents u64 * rank
//!   data     f64 * product(extents), little-endian
//! ```
//!
//! Round-trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MCK1";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, shape, data) in entries {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::contract(format!(
                "tensor {name}: {} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        for &v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::format(format!(
                "truncated checkpoint: needed {} bytes for {} at offset {}, file has {}",
                n,
                what,
                self.pos,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut cur = Cursor { data: &raw, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad checkpoint magic {:02x?} at offset 0, expected {:02x?}",
            magic, MAGIC
        )));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let count = cur.u64("tensor count")? as usize;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let name_len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::format(format!("tensor {i}: name is not UTF-8")))?;
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = cur.take(n * 8, "tensor data")?;
        let mut data = Vec::with_capacity(n);
        for c in bytes.chunks_exact(8) {
            data.push(f64::from_le_bytes(c.try_into().unwrap()));
        }
        entries.push((name, shape, data));
    }
    if cur.pos != raw.len() {
        return Err(Error::format(format!(
            "trailing {} bytes after last tensor at offset {}",
            raw.len() - cur.pos,
            cur.pos
        )));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Vec<usize>, Vec<f64>)> {
        vec![
            ("layer.weight".into(), vec![2, 3], vec![1.5, -2.0, 0.25, 1e-300, f64::MAX, -0.0]),
            ("layer.bias".into(), vec![1], vec![std::f64::consts::PI]),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("mail_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        let entries = sample();
        save_checkpoint(&path, &entries).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(entries.len(), back.len());
        for ((n1, s1, d1), (n2, s2, d2)) in entries.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(s1, s2);
            for (a, b) in d1.iter().zip(d2) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected_with_offset() {
        let dir = std::env::temp_dir().join("mail_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        let e = load_checkpoint(&path).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Format);
        assert!(e.message.contains("offset 0"), "{}", e.message);
    }

    #[test]
    fn truncation_names_expected_length() {
        let dir = std::env::temp_dir().join("mail_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ckpt");
        save_checkpoint(&path, &sample()).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        let e = load_checkpoint(&path).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Format);
        assert!(e.message.contains("truncated"), "{}", e.message);
    }
}
