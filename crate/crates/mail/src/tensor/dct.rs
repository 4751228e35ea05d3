//! Orthonormal 2-D discrete cosine transform, applied per channel.
//!
//! Forward is type-II with orthonormal scaling, inverse is type-III; the pair
//! composes to the identity and both preserve the Frobenius norm.

use super::Tensor;
use crate::error::{Error, Result};

/// Orthonormal DCT-II basis matrix of size `n x n`; row u, column i holds
/// `s(u) * cos(pi * (2i + 1) * u / (2n))`.
fn basis(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for u in 0..n {
        let s = if u == 0 { norm0 } else { norm };
        for i in 0..n {
            m[u * n + i] = s * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * u as f64 / (2.0 * n as f64)).cos();
        }
    }
    m
}

/// out[u, v] = sum_{i, j} a[u, i] * x[i, j] * b[v, j]
/// with `a` an `h x h` matrix, `b` a `w x w` matrix, optionally transposed.
fn transform_plane(
    x: &[f64],
    h: usize,
    w: usize,
    a: &[f64],
    b: &[f64],
    transpose: bool,
    tmp: &mut [f64],
    out: &mut [f64],
) {
    // tmp = A x  (or A^T x)
    tmp.iter_mut().for_each(|v| *v = 0.0);
    for u in 0..h {
        let trow = &mut tmp[u * w..(u + 1) * w];
        for i in 0..h {
            let av = if transpose { a[i * h + u] } else { a[u * h + i] };
            if av == 0.0 {
                continue;
            }
            let xrow = &x[i * w..(i + 1) * w];
            for j in 0..w {
                trow[j] += av * xrow[j];
            }
        }
    }
    // out = tmp B^T (or tmp B)
    for u in 0..h {
        let trow = &tmp[u * w..(u + 1) * w];
        let orow = &mut out[u * w..(u + 1) * w];
        for v in 0..w {
            let mut acc = 0.0;
            for j in 0..w {
                let bv = if transpose { b[j * w + v] } else { b[v * w + j] };
                acc += trow[j] * bv;
            }
            orow[v] = acc;
        }
    }
}

/// Per-channel 2-D DCT of a `[B, C, H, W]` tensor; `inverse` applies the
/// type-III inverse transform.
pub fn dct2d(input: &Tensor, inverse: bool) -> Result<Tensor> {
    let sh = input.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("dct2d expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if h == 0 || w == 0 {
        return Err(Error::dimension("dct2d requires a non-empty spatial extent"));
    }
    let ah = basis(h);
    let bw = basis(w);
    let plane = h * w;
    let d = input.data();
    let mut out = vec![0.0; d.len()];
    let mut tmp = vec![0.0; plane];
    for bc in 0..b * c {
        transform_plane(
            &d[bc * plane..(bc + 1) * plane],
            h,
            w,
            &ah,
            &bw,
            inverse,
            &mut tmp,
            &mut out[bc * plane..(bc + 1) * plane],
        );
    }
    let backward = if input.requires_grad() {
        let input_c = input.clone();
        Some(Box::new(move |g: &[f64]| {
            // The adjoint of an orthonormal transform is its inverse.
            let ah = basis(h);
            let bw = basis(w);
            let mut gx = vec![0.0; g.len()];
            let mut tmp = vec![0.0; plane];
            for bc in 0..b * c {
                transform_plane(
                    &g[bc * plane..(bc + 1) * plane],
                    h,
                    w,
                    &ah,
                    &bw,
                    !inverse,
                    &mut tmp,
                    &mut gx[bc * plane..(bc + 1) * plane],
                );
            }
            input_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, sh.to_vec(), vec![input.clone()], backward))
}
