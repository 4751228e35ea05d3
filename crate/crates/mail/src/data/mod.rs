//! Dataset container, synthetic task generation and augmentation.
//!
//! Images are stored as 8-bit planes and converted to `[0, 1]` doubles at
//! load, so perturbation budgets quoted on the pixel scale (like 4/255)
//! apply directly.

mod augment;
mod synth;

pub use augment::{
    augment_dataset, augment_sample, gaussian_blur3, modality_synthesize, rotate_bilinear,
    translate, AugmentSpec, ModalityMode,
};
pub use synth::{synth_generate, SynthSpec};

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MIC1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(&self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(t: u8) -> Result<Split> {
        match t {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            _ => Err(Error::format(format!("unknown split tag {t}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// In-memory multimodal image classification dataset.
#[derive(Debug, Clone)]
pub struct DatasetContainer {
    /// Per-modality `(channels, height, width)`.
    pub modal_shapes: Vec<(usize, usize, usize)>,
    pub task_classes: Vec<usize>,
    pub splits: Vec<Split>,
    /// `labels[sample][task]`.
    pub labels: Vec<Vec<u16>>,
    /// Packed pixel planes: `[sample][modality][c][h][w]`.
    pub pixels: Vec<u8>,
}

impl DatasetContainer {
    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn bytes_per_modality(&self, m: usize) -> usize {
        let (c, h, w) = self.modal_shapes[m];
        c * h * w
    }

    pub fn bytes_per_sample(&self) -> usize {
        (0..self.modal_shapes.len()).map(|m| self.bytes_per_modality(m)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.len() {
            return Err(Error::format("label table does not match sample count"));
        }
        let expect = self.len() * self.bytes_per_sample();
        if self.pixels.len() != expect {
            return Err(Error::format(format!(
                "payload length {} does not match {} samples of {} bytes",
                self.pixels.len(),
                self.len(),
                self.bytes_per_sample()
            )));
        }
        for (i, row) in self.labels.iter().enumerate() {
            if row.len() != self.task_classes.len() {
                return Err(Error::format(format!("sample {i}: wrong task label count")));
            }
            for (t, &y) in row.iter().enumerate() {
                if (y as usize) >= self.task_classes[t] {
                    return Err(Error::format(format!(
                        "sample {i}: label {y} out of range for task {t}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    fn sample_offset(&self, idx: usize, modality: usize) -> usize {
        let per = self.bytes_per_sample();
        let mut off = idx * per;
        for m in 0..modality {
            off += self.bytes_per_modality(m);
        }
        off
    }

    pub fn sample_plane(&self, idx: usize, modality: usize) -> &[u8] {
        let off = self.sample_offset(idx, modality);
        &self.pixels[off..off + self.bytes_per_modality(modality)]
    }

    pub fn sample_plane_mut(&mut self, idx: usize, modality: usize) -> &mut [u8] {
        let off = self.sample_offset(idx, modality);
        let len = self.bytes_per_modality(modality);
        &mut self.pixels[off..off + len]
    }

    /// Batch of samples for one modality as a `[B, C, H, W]` tensor scaled
    /// to `[0, 1]`.
    pub fn batch(&self, indices: &[usize], modality: usize) -> Result<Tensor> {
        let (c, h, w) = self.modal_shapes[modality];
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::data(format!("sample index {i} out of range")));
            }
            data.extend(self.sample_plane(i, modality).iter().map(|&b| b as f64 / 255.0));
        }
        Tensor::from_vec(data, &[indices.len(), c, h, w], false)
    }

    /// Labels of one task for the given samples.
    pub fn label_batch(&self, indices: &[usize], task: usize) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i][task] as usize).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.modal_shapes.len() as u32).to_le_bytes());
        for &(c, h, w) in &self.modal_shapes {
            buf.extend_from_slice(&(c as u32).to_le_bytes());
            buf.extend_from_slice(&(h as u32).to_le_bytes());
            buf.extend_from_slice(&(w as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.task_classes.len() as u32).to_le_bytes());
        for &k in &self.task_classes {
            buf.extend_from_slice(&(k as u32).to_le_bytes());
        }
        for s in &self.splits {
            buf.push(s.tag());
        }
        for row in &self.labels {
            for &y in row {
                buf.extend_from_slice(&y.to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.pixels);
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<DatasetContainer> {
        let mut raw = Vec::new();
        fs::File::open(path)?.read_to_end(&mut raw)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
            if *pos + n > raw.len() {
                return Err(Error::format(format!(
                    "truncated container: needed {} bytes for {} at offset {}, file has {}",
                    n,
                    what,
                    *pos,
                    raw.len()
                )));
            }
            let s = &raw[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(format!(
                "bad container magic {:02x?} at offset 0, expected {:02x?}",
                magic, MAGIC
            )));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::format(format!("unsupported container version {version}")));
        }
        let count = u64::from_le_bytes(take(&mut pos, 8, "sample count")?.try_into().unwrap()) as usize;
        let modalities = u32::from_le_bytes(take(&mut pos, 4, "modality count")?.try_into().unwrap()) as usize;
        let mut modal_shapes = Vec::with_capacity(modalities);
        for _ in 0..modalities {
            let c = u32::from_le_bytes(take(&mut pos, 4, "channels")?.try_into().unwrap()) as usize;
            let h = u32::from_le_bytes(take(&mut pos, 4, "height")?.try_into().unwrap()) as usize;
            let w = u32::from_le_bytes(take(&mut pos, 4, "width")?.try_into().unwrap()) as usize;
            modal_shapes.push((c, h, w));
        }
        let tasks = u32::from_le_bytes(take(&mut pos, 4, "task count")?.try_into().unwrap()) as usize;
        let mut task_classes = Vec::with_capacity(tasks);
        for _ in 0..tasks {
            task_classes.push(u32::from_le_bytes(take(&mut pos, 4, "class count")?.try_into().unwrap()) as usize);
        }
        let mut splits = Vec::with_capacity(count);
        for &t in take(&mut pos, count, "split tags")? {
            splits.push(Split::from_tag(t)?);
        }
        let mut labels = Vec::with_capacity(count);
        let raw_labels = take(&mut pos, count * tasks * 2, "labels")?;
        for i in 0..count {
            let mut row = Vec::with_capacity(tasks);
            for t in 0..tasks {
                let off = (i * tasks + t) * 2;
                row.push(u16::from_le_bytes(raw_labels[off..off + 2].try_into().unwrap()));
            }
            labels.push(row);
        }
        let per_sample: usize = modal_shapes.iter().map(|&(c, h, w)| c * h * w).sum();
        let expect = count * per_sample;
        let got = raw.len() - pos;
        if got != expect {
            return Err(Error::format(format!(
                "payload length mismatch at offset {pos}: expected {expect} bytes, found {got}"
            )));
        }
        let pixels = raw[pos..].to_vec();
        let container = DatasetContainer { modal_shapes, task_classes, splits, labels, pixels };
        container.validate()?;
        Ok(container)
    }

    /// Plain-text manifest: one `id split labels` line per sample.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let labels: Vec<String> = self.labels[i].iter().map(|y| y.to_string()).collect();
            out.push_str(&format!("{} {} {}\n", i, self.splits[i].name(), labels.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetContainer {
        DatasetContainer {
            modal_shapes: vec![(1, 2, 2), (1, 2, 2)],
            task_classes: vec![2],
            splits: vec![Split::Train, Split::Test],
            labels: vec![vec![0], vec![1]],
            pixels: (0..16u8).collect(),
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let dir = std::env::temp_dir().join("mail_data_test");
        fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.mic");
        let p2 = dir.join("b.mic");
        let c = tiny();
        c.save(&p1).unwrap();
        let back = DatasetContainer::load(&p1).unwrap();
        back.save(&p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_payload_names_lengths() {
        let dir = std::env::temp_dir().join("mail_data_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("trunc.mic");
        tiny().save(&p).unwrap();
        let full = fs::read(&p).unwrap();
        fs::write(&p, &full[..full.len() - 3]).unwrap();
        let e = DatasetContainer::load(&p).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Format);
        assert!(e.message.contains("expected"), "{}", e.message);
    }

    #[test]
    fn corrupt_magic_rejected_before_payload() {
        let dir = std::env::temp_dir().join("mail_data_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("magic.mic");
        tiny().save(&p).unwrap();
        let mut raw = fs::read(&p).unwrap();
        raw[0] = b'X';
        fs::write(&p, &raw).unwrap();
        let e = DatasetContainer::load(&p).unwrap_err();
        assert!(e.message.contains("magic"), "{}", e.message);
    }

    #[test]
    fn batch_scales_to_unit_interval() {
        let c = tiny();
        let t = c.batch(&[0, 1], 0).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert!((t.data()[1] - 1.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn manifest_lists_every_sample() {
        let c = tiny();
        let m = c.manifest();
        assert_eq!(m.lines().count(), 2);
        assert!(m.contains("0 train 0"));
        assert!(m.contains("1 test 1"));
    }
}
