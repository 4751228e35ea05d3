//! Global and local spatial pooling.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalPoolKind {
    Avg,
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalPoolKind {
    Avg,
    Max,
}

/// Per-channel reduction over the whole spatial extent, to `[B, C, 1, 1]`.
///
/// Max/min route their subgradient to the first attaining element in
/// row-major order.
pub fn global_pool(input: &Tensor, kind: GlobalPoolKind) -> Result<Tensor> {
    let sh = input.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("global_pool expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if h == 0 || w == 0 {
        return Err(Error::dimension("global_pool requires a non-empty spatial extent"));
    }
    let plane = h * w;
    let d = input.data();
    let mut out = vec![0.0; b * c];
    let mut arg = if matches!(kind, GlobalPoolKind::Avg) { Vec::new() } else { vec![0usize; b * c] };
    for bc in 0..b * c {
        let src = &d[bc * plane..(bc + 1) * plane];
        match kind {
            GlobalPoolKind::Avg => {
                let mut s = 0.0;
                for &v in src {
                    s += v;
                }
                out[bc] = s / plane as f64;
            }
            GlobalPoolKind::Max => {
                let (mut best, mut bi) = (src[0], 0usize);
                for (i, &v) in src.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        bi = i;
                    }
                }
                out[bc] = best;
                arg[bc] = bi;
            }
            GlobalPoolKind::Min => {
                let (mut best, mut bi) = (src[0], 0usize);
                for (i, &v) in src.iter().enumerate().skip(1) {
                    if v < best {
                        best = v;
                        bi = i;
                    }
                }
                out[bc] = best;
                arg[bc] = bi;
            }
        }
    }
    let backward = if input.requires_grad() {
        let input_c = input.clone();
        Some(Box::new(move |g: &[f64]| {
            let mut gx = vec![0.0; b * c * plane];
            match kind {
                GlobalPoolKind::Avg => {
                    let inv = 1.0 / plane as f64;
                    for bc in 0..b * c {
                        let gv = g[bc] * inv;
                        for v in gx[bc * plane..(bc + 1) * plane].iter_mut() {
                            *v = gv;
                        }
                    }
                }
                _ => {
                    for bc in 0..b * c {
                        gx[bc * plane + arg[bc]] = g[bc];
                    }
                }
            }
            input_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, vec![b, c, 1, 1], vec![input.clone()], backward))
}

/// 2x2 stride-2 pooling; a trailing odd row/column is dropped.
pub fn local_pool(input: &Tensor, kind: LocalPoolKind) -> Result<Tensor> {
    const WIN: usize = 2;
    let sh = input.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("local_pool expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if h < WIN || w < WIN {
        return Err(Error::dimension(format!(
            "local_pool window {WIN} exceeds spatial extent {h}x{w}"
        )));
    }
    let (oh, ow) = (h / WIN, w / WIN);
    let plane = h * w;
    let oplane = oh * ow;
    let d = input.data();
    let mut out = vec![0.0; b * c * oplane];
    let mut arg = if matches!(kind, LocalPoolKind::Avg) { Vec::new() } else { vec![0usize; b * c * oplane] };
    for bc in 0..b * c {
        let src = &d[bc * plane..(bc + 1) * plane];
        for r in 0..oh {
            for col in 0..ow {
                let base = r * WIN * w + col * WIN;
                let window = [base, base + 1, base + w, base + w + 1];
                let oi = bc * oplane + r * ow + col;
                match kind {
                    LocalPoolKind::Avg => {
                        out[oi] = window.iter().map(|&i| src[i]).sum::<f64>() / 4.0;
                    }
                    LocalPoolKind::Max => {
                        let (mut best, mut bi) = (src[window[0]], window[0]);
                        for &i in &window[1..] {
                            if src[i] > best {
                                best = src[i];
                                bi = i;
                            }
                        }
                        out[oi] = best;
                        arg[oi] = bi;
                    }
                }
            }
        }
    }
    let backward = if input.requires_grad() {
        let input_c = input.clone();
        Some(Box::new(move |g: &[f64]| {
            let mut gx = vec![0.0; b * c * plane];
            match kind {
                LocalPoolKind::Avg => {
                    for bc in 0..b * c {
                        for r in 0..oh {
                            for col in 0..ow {
                                let gv = g[bc * oplane + r * ow + col] * 0.25;
                                let base = bc * plane + r * WIN * w + col * WIN;
                                gx[base] += gv;
                                gx[base + 1] += gv;
                                gx[base + w] += gv;
                                gx[base + w + 1] += gv;
                            }
                        }
                    }
                }
                LocalPoolKind::Max => {
                    for (oi, &src_i) in arg.iter().enumerate() {
                        let bc = oi / oplane;
                        gx[bc * plane + src_i] += g[oi];
                    }
                }
            }
            input_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, vec![b, c, oh, ow], vec![input.clone()], backward))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_pools_to_constant() {
        let x = Tensor::full(&[1, 2, 3, 3], 2.5);
        for kind in [GlobalPoolKind::Avg, GlobalPoolKind::Max, GlobalPoolKind::Min] {
            let y = global_pool(&x, kind).unwrap();
            assert_eq!(y.shape(), &[1, 2, 1, 1]);
            assert!(y.data().iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn singleton_spatial_extent_returns_element() {
        let x = Tensor::from_vec(vec![7.0, -3.0], &[1, 2, 1, 1], false).unwrap();
        for kind in [GlobalPoolKind::Avg, GlobalPoolKind::Max, GlobalPoolKind::Min] {
            let y = global_pool(&x, kind).unwrap();
            assert_eq!(y.data(), x.data());
        }
    }

    #[test]
    fn local_pool_two_by_two() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2], false).unwrap();
        assert_eq!(local_pool(&x, LocalPoolKind::Avg).unwrap().data(), &[2.5]);
        assert_eq!(local_pool(&x, LocalPoolKind::Max).unwrap().data(), &[4.0]);
    }

    #[test]
    fn local_pool_constant_field() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.25);
        for kind in [LocalPoolKind::Avg, LocalPoolKind::Max] {
            let y = local_pool(&x, kind).unwrap();
            assert!(y.data().iter().all(|&v| v == 1.25));
        }
    }

    #[test]
    fn local_pool_drops_odd_trailing() {
        let x = Tensor::zeros(&[1, 1, 5, 7]);
        let y = local_pool(&x, LocalPoolKind::Avg).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 3]);
    }

    #[test]
    fn local_pool_window_exceeding_extent_errors() {
        let x = Tensor::zeros(&[1, 1, 1, 4]);
        let e = local_pool(&x, LocalPoolKind::Avg).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Dimension);
    }

    #[test]
    fn max_subgradient_goes_to_first_attaining() {
        // Two equal maxima; the first in row-major order receives the grad.
        let x = Tensor::from_vec(vec![1.0, 5.0, 5.0, 0.0], &[1, 1, 2, 2], true).unwrap();
        let y = global_pool(&x, GlobalPoolKind::Max).unwrap();
        crate::tensor::sum_all(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }
}
