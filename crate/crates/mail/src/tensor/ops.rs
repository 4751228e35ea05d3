//! Elementwise, broadcast, linear-algebra and loss operations.

use super::{any_requires_grad, numel, Tensor};
use crate::error::{Error, Result};

/// Right-aligned broadcast of two shapes; each axis must match or be 1.
fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(Error::dimension(format!(
                "cannot broadcast {:?} with {:?}: axis {} has extents {} vs {}",
                a, b, i, da, db
            )));
        }
    }
    Ok(out)
}

/// Per-axis element strides of `shape` padded to `rank`, with stride 0 on
/// broadcast (extent-1) axes.
fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut full = vec![1usize; rank];
    let offset = rank - shape.len();
    full[offset..].copy_from_slice(shape);
    let mut strides = vec![0usize; rank];
    let mut acc = 1usize;
    for i in (0..rank).rev() {
        strides[i] = if full[i] == 1 { 0 } else { acc };
        acc *= full[i];
    }
    strides
}

/// Odometer walk over the broadcast output space, yielding flat indices into
/// both operands for every output element.
fn broadcast_walk(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ai, mut bi) = (0usize, 0usize);
    for out_i in 0..total {
        f(out_i, ai, bi);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ai += sa[ax];
            bi += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            ai -= sa[ax] * out_shape[ax];
            bi -= sb[ax] * out_shape[ax];
        }
    }
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

fn binary_broadcast(a: &Tensor, b: &Tensor, kind: BinKind) -> Result<Tensor> {
    let out_shape = broadcast_shapes(a.shape(), b.shape())?;
    let rank = out_shape.len();
    let sa = broadcast_strides(a.shape(), rank);
    let sb = broadcast_strides(b.shape(), rank);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; numel(&out_shape)];

    if a.shape() == b.shape() {
        match kind {
            BinKind::Add => out.iter_mut().zip(ad.iter().zip(bd)).for_each(|(o, (&x, &y))| *o = x + y),
            BinKind::Sub => out.iter_mut().zip(ad.iter().zip(bd)).for_each(|(o, (&x, &y))| *o = x - y),
            BinKind::Mul => out.iter_mut().zip(ad.iter().zip(bd)).for_each(|(o, (&x, &y))| *o = x * y),
        }
    } else {
        match kind {
            BinKind::Add => broadcast_walk(&out_shape, &sa, &sb, |i, ai, bi| out[i] = ad[ai] + bd[bi]),
            BinKind::Sub => broadcast_walk(&out_shape, &sa, &sb, |i, ai, bi| out[i] = ad[ai] - bd[bi]),
            BinKind::Mul => broadcast_walk(&out_shape, &sa, &sb, |i, ai, bi| out[i] = ad[ai] * bd[bi]),
        }
    }

    let backward = if any_requires_grad(&[a, b]) {
        let (a, b) = (a.clone(), b.clone());
        let out_shape_c = out_shape.clone();
        Some(Box::new(move |g: &[f64]| {
            let mut ga = vec![0.0; a.numel()];
            let mut gb = vec![0.0; b.numel()];
            match kind {
                BinKind::Add => broadcast_walk(&out_shape_c, &sa, &sb, |i, ai, bi| {
                    ga[ai] += g[i];
                    gb[bi] += g[i];
                }),
                BinKind::Sub => broadcast_walk(&out_shape_c, &sa, &sb, |i, ai, bi| {
                    ga[ai] += g[i];
                    gb[bi] -= g[i];
                }),
                BinKind::Mul => {
                    let (ad, bd) = (a.data(), b.data());
                    broadcast_walk(&out_shape_c, &sa, &sb, |i, ai, bi| {
                        ga[ai] += g[i] * bd[bi];
                        gb[bi] += g[i] * ad[ai];
                    })
                }
            }
            a.accumulate_grad(&ga);
            b.accumulate_grad(&gb);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };

    Ok(Tensor::from_op(out, out_shape, vec![a.clone(), b.clone()], backward))
}

/// Elementwise sum with right-aligned broadcasting.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_broadcast(a, b, BinKind::Add)
}

/// Elementwise difference with right-aligned broadcasting.
pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_broadcast(a, b, BinKind::Sub)
}

/// Elementwise product with right-aligned broadcasting.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_broadcast(a, b, BinKind::Mul)
}

/// Sum of same-shaped tensors; shallower graph than chained `add`.
pub fn add_n(ts: &[&Tensor]) -> Result<Tensor> {
    let first = ts.first().ok_or_else(|| Error::contract("add_n of empty list"))?;
    for t in ts {
        if t.shape() != first.shape() {
            return Err(Error::dimension(format!(
                "add_n shape mismatch: {:?} vs {:?}",
                first.shape(),
                t.shape()
            )));
        }
    }
    let mut out = first.data().to_vec();
    for t in &ts[1..] {
        for (o, &v) in out.iter_mut().zip(t.data()) {
            *o += v;
        }
    }
    let parents: Vec<Tensor> = ts.iter().map(|t| (*t).clone()).collect();
    let backward = if ts.iter().any(|t| t.requires_grad()) {
        let parents_c = parents.clone();
        Some(Box::new(move |g: &[f64]| {
            for p in &parents_c {
                p.accumulate_grad(g);
            }
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, first.shape().to_vec(), parents, backward))
}

/// Multiply by a plain constant.
pub fn scale_const(x: &Tensor, c: f64) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| v * c).collect();
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        Some(Box::new(move |g: &[f64]| {
            let gx: Vec<f64> = g.iter().map(|&v| v * c).collect();
            x_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Tensor::from_op(out, x.shape().to_vec(), vec![x.clone()], backward)
}

/// Add a plain constant.
pub fn add_const(x: &Tensor, c: f64) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| v + c).collect();
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        Some(Box::new(move |g: &[f64]| x_c.accumulate_grad(g)) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Tensor::from_op(out, x.shape().to_vec(), vec![x.clone()], backward)
}

/// Rectified linear unit.
pub fn relu(x: &Tensor) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        Some(Box::new(move |g: &[f64]| {
            let gx: Vec<f64> = x_c
                .data()
                .iter()
                .zip(g)
                .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                .collect();
            x_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Tensor::from_op(out, x.shape().to_vec(), vec![x.clone()], backward)
}

/// Logistic sigmoid; outputs lie strictly in (0, 1).
///
/// Saturated values are clamped to the nearest representable interior
/// doubles so the open-interval range holds even for extreme inputs.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let hi = 1.0 - f64::EPSILON / 2.0;
    let out: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| (1.0 / (1.0 + (-v).exp())).clamp(f64::MIN_POSITIVE, hi))
        .collect();
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        let saved = out.clone();
        Some(Box::new(move |g: &[f64]| {
            let gx: Vec<f64> = saved.iter().zip(g).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
            x_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Tensor::from_op(out, x.shape().to_vec(), vec![x.clone()], backward)
}

/// Elementwise square root.
pub fn sqrt(x: &Tensor) -> Tensor {
    let out: Vec<f64> = x.data().iter().map(|&v| v.sqrt()).collect();
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        let saved = out.clone();
        Some(Box::new(move |g: &[f64]| {
            let gx: Vec<f64> = saved.iter().zip(g).map(|(&s, &gv)| gv * 0.5 / s).collect();
            x_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Tensor::from_op(out, x.shape().to_vec(), vec![x.clone()], backward)
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum_all(x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        Some(Box::new(move |g: &[f64]| {
            let gx = vec![g[0]; x_c.numel()];
            x_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Tensor::from_op(vec![s], vec![1], vec![x.clone()], backward)
}

/// Mean of all elements, as a `[1]` tensor.
pub fn mean_all(x: &Tensor) -> Tensor {
    scale_const(&sum_all(x), 1.0 / x.numel() as f64)
}

/// View with a new shape; element count must be preserved.
pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if numel(shape) != x.numel() {
        return Err(Error::dimension(format!(
            "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
            x.shape(),
            x.numel(),
            shape,
            numel(shape)
        )));
    }
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        Some(Box::new(move |g: &[f64]| x_c.accumulate_grad(g)) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(x.data().to_vec(), shape.to_vec(), vec![x.clone()], backward))
}

/// Concatenate along axis 0; trailing extents must match.
pub fn concat0(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape()[1..] != b.shape()[1..] {
        return Err(Error::dimension(format!(
            "concat0 trailing shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut out = Vec::with_capacity(a.numel() + b.numel());
    out.extend_from_slice(a.data());
    out.extend_from_slice(b.data());
    let backward = if any_requires_grad(&[a, b]) {
        let (a_c, b_c) = (a.clone(), b.clone());
        let split = a.numel();
        Some(Box::new(move |g: &[f64]| {
            a_c.accumulate_grad(&g[..split]);
            b_c.accumulate_grad(&g[split..]);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, shape, vec![a.clone(), b.clone()], backward))
}

/// New leaf with the same values and no gradient linkage.
pub fn detach(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.data().to_vec(), x.shape(), false).unwrap()
}

/// Fully connected layer: `y[b,o] = sum_i x[b,i] w[o,i] + bias[o]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    if x.shape().len() != 2 || w.shape().len() != 2 {
        return Err(Error::dimension(format!(
            "linear expects 2-D input and weight, got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (bsz, in_f) = (x.shape()[0], x.shape()[1]);
    let (out_f, w_in) = (w.shape()[0], w.shape()[1]);
    if in_f != w_in {
        return Err(Error::dimension(format!(
            "linear feature mismatch on axis 1: input has {}, weight expects {}",
            in_f, w_in
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [out_f] {
            return Err(Error::dimension(format!(
                "linear bias shape {:?} does not match output width {}",
                b.shape(),
                out_f
            )));
        }
    }

    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; bsz * out_f];
    for b in 0..bsz {
        let xrow = &xd[b * in_f..(b + 1) * in_f];
        let orow = &mut out[b * out_f..(b + 1) * out_f];
        for o in 0..out_f {
            let wrow = &wd[o * in_f..(o + 1) * in_f];
            let mut acc = 0.0;
            for i in 0..in_f {
                acc += xrow[i] * wrow[i];
            }
            orow[o] = acc;
        }
    }
    if let Some(bt) = bias {
        let bd = bt.data();
        for b in 0..bsz {
            for o in 0..out_f {
                out[b * out_f + o] += bd[o];
            }
        }
    }

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let needs = parents.iter().any(|t| t.requires_grad());
    let backward = if needs {
        let x_c = x.clone();
        let w_c = w.clone();
        let b_c = bias.cloned();
        Some(Box::new(move |g: &[f64]| {
            let (xd, wd) = (x_c.data(), w_c.data());
            if x_c.requires_grad() {
                let mut gx = vec![0.0; bsz * in_f];
                for b in 0..bsz {
                    let grow = &g[b * out_f..(b + 1) * out_f];
                    let gxrow = &mut gx[b * in_f..(b + 1) * in_f];
                    for o in 0..out_f {
                        let go = grow[o];
                        let wrow = &wd[o * in_f..(o + 1) * in_f];
                        for i in 0..in_f {
                            gxrow[i] += go * wrow[i];
                        }
                    }
                }
                x_c.accumulate_grad(&gx);
            }
            if w_c.requires_grad() {
                let mut gw = vec![0.0; out_f * in_f];
                for b in 0..bsz {
                    let grow = &g[b * out_f..(b + 1) * out_f];
                    let xrow = &xd[b * in_f..(b + 1) * in_f];
                    for o in 0..out_f {
                        let go = grow[o];
                        let gwrow = &mut gw[o * in_f..(o + 1) * in_f];
                        for i in 0..in_f {
                            gwrow[i] += go * xrow[i];
                        }
                    }
                }
                w_c.accumulate_grad(&gw);
            }
            if let Some(bt) = &b_c {
                if bt.requires_grad() {
                    let mut gb = vec![0.0; out_f];
                    for b in 0..bsz {
                        for o in 0..out_f {
                            gb[o] += g[b * out_f + o];
                        }
                    }
                    bt.accumulate_grad(&gb);
                }
            }
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, vec![bsz, out_f], parents, backward))
}

/// Row-wise softmax probabilities of a `[B, K]` logit matrix (no tape).
pub fn softmax_rows(logits: &Tensor) -> Result<Vec<Vec<f64>>> {
    if logits.shape().len() != 2 {
        return Err(Error::dimension(format!(
            "softmax expects 2-D logits, got {:?}",
            logits.shape()
        )));
    }
    let (bsz, k) = (logits.shape()[0], logits.shape()[1]);
    let d = logits.data();
    let mut out = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let row = &d[b * k..(b + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.push(exps.iter().map(|&e| e / z).collect());
    }
    Ok(out)
}

/// Mean cross-entropy of `[B, K]` logits against integer class labels.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::dimension(format!(
            "cross-entropy expects 2-D logits, got {:?}",
            logits.shape()
        )));
    }
    let (bsz, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != bsz {
        return Err(Error::dimension(format!(
            "cross-entropy batch mismatch: {} logits rows vs {} labels",
            bsz,
            labels.len()
        )));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::data(format!(
                "label {} at sample {} out of range for {} classes",
                y, i, k
            )));
        }
    }
    let d = logits.data();
    let mut probs = vec![0.0; bsz * k];
    let mut loss = 0.0;
    for b in 0..bsz {
        let row = &d[b * k..(b + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[b * k + j] = e;
            z += e;
        }
        for j in 0..k {
            probs[b * k + j] /= z;
        }
        loss -= (probs[b * k + labels[b]]).ln();
    }
    loss /= bsz as f64;

    let backward = if logits.requires_grad() {
        let logits_c = logits.clone();
        let labels_c = labels.to_vec();
        Some(Box::new(move |g: &[f64]| {
            let scale = g[0] / bsz as f64;
            let mut gx = probs.clone();
            for b in 0..bsz {
                gx[b * k + labels_c[b]] -= 1.0;
            }
            for v in gx.iter_mut() {
                *v *= scale;
            }
            logits_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(vec![loss], vec![1], vec![logits.clone()], backward))
}

/// Nearest-neighbour resize of the spatial axes of a `[B,C,H,W]` tensor.
pub fn upsample_nearest(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("upsample expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::dimension("upsample target extent must be positive"));
    }
    let d = x.data();
    let mut out = vec![0.0; b * c * out_h * out_w];
    let mut map_h = vec![0usize; out_h];
    for (oh, m) in map_h.iter_mut().enumerate() {
        *m = oh * h / out_h;
    }
    let mut map_w = vec![0usize; out_w];
    for (ow, m) in map_w.iter_mut().enumerate() {
        *m = ow * w / out_w;
    }
    for bc in 0..b * c {
        let src = &d[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * out_h * out_w..(bc + 1) * out_h * out_w];
        for oh in 0..out_h {
            let srow = &src[map_h[oh] * w..map_h[oh] * w + w];
            let drow = &mut dst[oh * out_w..(oh + 1) * out_w];
            for ow in 0..out_w {
                drow[ow] = srow[map_w[ow]];
            }
        }
    }
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        let map_h_c = map_h.clone();
        let map_w_c = map_w.clone();
        Some(Box::new(move |g: &[f64]| {
            let mut gx = vec![0.0; b * c * h * w];
            for bc in 0..b * c {
                let gsrc = &g[bc * out_h * out_w..(bc + 1) * out_h * out_w];
                let gdst = &mut gx[bc * h * w..(bc + 1) * h * w];
                for oh in 0..out_h {
                    let ih = map_h_c[oh];
                    for ow in 0..out_w {
                        gdst[ih * w + map_w_c[ow]] += gsrc[oh * out_w + ow];
                    }
                }
            }
            x_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, vec![b, c, out_h, out_w], vec![x.clone()], backward))
}

/// Permute channels by viewing `C` as `(groups, C/groups)` and transposing.
pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("channel_shuffle expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::config(format!(
            "channel_shuffle groups {} must divide channel count {}",
            groups, c
        )));
    }
    let per = c / groups;
    // Output channel n takes input channel (n % g) * (C/g) + n / g.
    let mut src_of = vec![0usize; c];
    for (n, s) in src_of.iter_mut().enumerate() {
        *s = (n % groups) * per + n / groups;
    }
    let plane = h * w;
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for bi in 0..b {
        for n in 0..c {
            let s = src_of[n];
            let src = &d[(bi * c + s) * plane..(bi * c + s + 1) * plane];
            out[(bi * c + n) * plane..(bi * c + n + 1) * plane].copy_from_slice(src);
        }
    }
    let backward = if x.requires_grad() {
        let x_c = x.clone();
        let src_of_c = src_of.clone();
        Some(Box::new(move |g: &[f64]| {
            let mut gx = vec![0.0; g.len()];
            for bi in 0..b {
                for n in 0..c {
                    let s = src_of_c[n];
                    let gsrc = &g[(bi * c + n) * plane..(bi * c + n + 1) * plane];
                    let gdst = &mut gx[(bi * c + s) * plane..(bi * c + s + 1) * plane];
                    for (d, &v) in gdst.iter_mut().zip(gsrc) {
                        *d += v;
                    }
                }
            }
            x_c.accumulate_grad(&gx);
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, sh.to_vec(), vec![x.clone()], backward))
}

/// Batch normalization over `(B, H, W)` per channel, training mode.
///
/// Returns the normalized output plus the biased batch mean and variance so
/// the caller can fold them into running statistics.
pub fn batch_norm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    const EPS: f64 = 1e-5;
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("batch_norm expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dimension(format!(
            "batch_norm scale/shift must have shape [{}], got {:?} and {:?}",
            c,
            gamma.shape(),
            beta.shape()
        )));
    }
    let n = b * h * w;
    let plane = h * w;
    let d = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for bi in 0..b {
        for ci in 0..c {
            let src = &d[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
            let mut s = 0.0;
            for &v in src {
                s += v;
            }
            mean[ci] += s;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for bi in 0..b {
        for ci in 0..c {
            let src = &d[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
            let m = mean[ci];
            let mut s = 0.0;
            for &v in src {
                let dv = v - m;
                s += dv * dv;
            }
            var[ci] += s;
        }
    }
    for v in var.iter_mut() {
        *v /= n as f64;
    }

    let gd = gamma.data();
    let bd = beta.data();
    let mut xhat = vec![0.0; d.len()];
    let mut out = vec![0.0; d.len()];
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + EPS).sqrt()).collect();
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let (m, is, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
            for i in 0..plane {
                let xh = (d[base + i] - m) * is;
                xhat[base + i] = xh;
                out[base + i] = ga * xh + be;
            }
        }
    }

    let backward = if any_requires_grad(&[x, gamma, beta]) {
        let x_c = x.clone();
        let gamma_c = gamma.clone();
        let beta_c = beta.clone();
        let inv_std_c = inv_std.clone();
        Some(Box::new(move |g: &[f64]| {
            let gd = gamma_c.data();
            // Per-channel reductions of g and g*xhat.
            let mut sum_g = vec![0.0; c];
            let mut sum_gx = vec![0.0; c];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let mut sg = 0.0;
                    let mut sgx = 0.0;
                    for i in 0..plane {
                        sg += g[base + i];
                        sgx += g[base + i] * xhat[base + i];
                    }
                    sum_g[ci] += sg;
                    sum_gx[ci] += sgx;
                }
            }
            if beta_c.requires_grad() {
                beta_c.accumulate_grad(&sum_g);
            }
            if gamma_c.requires_grad() {
                gamma_c.accumulate_grad(&sum_gx);
            }
            if x_c.requires_grad() {
                let nf = n as f64;
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let k = gd[ci] * inv_std_c[ci];
                        let mg = sum_g[ci] / nf;
                        let mgx = sum_gx[ci] / nf;
                        for i in 0..plane {
                            gx[base + i] = k * (g[base + i] - mg - xhat[base + i] * mgx);
                        }
                    }
                }
                x_c.accumulate_grad(&gx);
            }
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    let out_t = Tensor::from_op(out, sh.to_vec(), vec![x.clone(), gamma.clone(), beta.clone()], backward);
    Ok((out_t, mean, var))
}

/// Batch normalization using fixed (running) statistics, evaluation mode.
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
) -> Result<Tensor> {
    const EPS: f64 = 1e-5;
    let sh = x.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("batch_norm expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if gamma.shape() != [c] || beta.shape() != [c] || mean.len() != c || var.len() != c {
        return Err(Error::dimension("batch_norm statistics shape mismatch on channel axis"));
    }
    let plane = h * w;
    let d = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + EPS).sqrt()).collect();
    let mut out = vec![0.0; d.len()];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * plane;
            let (m, is, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
            for i in 0..plane {
                out[base + i] = ga * (d[base + i] - m) * is + be;
            }
        }
    }
    let backward = if any_requires_grad(&[x, gamma, beta]) {
        let x_c = x.clone();
        let gamma_c = gamma.clone();
        let beta_c = beta.clone();
        let mean_c = mean.to_vec();
        let inv_std_c = inv_std.clone();
        Some(Box::new(move |g: &[f64]| {
            let gd = gamma_c.data();
            let xd = x_c.data();
            if x_c.requires_grad() {
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        let k = gd[ci] * inv_std_c[ci];
                        for i in 0..plane {
                            gx[base + i] = k * g[base + i];
                        }
                    }
                }
                x_c.accumulate_grad(&gx);
            }
            if gamma_c.requires_grad() || beta_c.requires_grad() {
                let mut sg = vec![0.0; c];
                let mut sgx = vec![0.0; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * plane;
                        for i in 0..plane {
                            sg[ci] += g[base + i];
                            sgx[ci] += g[base + i] * (xd[base + i] - mean_c[ci]) * inv_std_c[ci];
                        }
                    }
                }
                if gamma_c.requires_grad() {
                    gamma_c.accumulate_grad(&sgx);
                }
                if beta_c.requires_grad() {
                    beta_c.accumulate_grad(&sg);
                }
            }
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };
    Ok(Tensor::from_op(out, sh.to_vec(), vec![x.clone(), gamma.clone(), beta.clone()], backward))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor::scalar(0.0);
        assert_eq!(sigmoid(&x).data()[0], 0.5);
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(vec![-3.0, 3.0], &[2], false).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 3.0]);
    }

    #[test]
    fn sigmoid_strictly_in_open_interval() {
        let x = Tensor::from_vec(vec![-80.0, -1.0, 0.0, 1.0, 80.0], &[5], false).unwrap();
        for &v in sigmoid(&x).data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn broadcast_add_channel_map() {
        // [1,2,2,2] + [1,2,1,1]
        let x = Tensor::from_vec((0..8).map(|v| v as f64).collect(), &[1, 2, 2, 2], false).unwrap();
        let m = Tensor::from_vec(vec![10.0, 20.0], &[1, 2, 1, 1], false).unwrap();
        let y = add(&x, &m).unwrap();
        assert_eq!(y.data(), &[10.0, 11.0, 12.0, 13.0, 24.0, 25.0, 26.0, 27.0]);
    }

    #[test]
    fn broadcast_mismatch_names_axis() {
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let m = Tensor::zeros(&[1, 3, 1, 1]);
        let e = add(&x, &m).unwrap_err();
        assert!(e.message.contains("axis 1"), "{}", e.message);
    }

    #[test]
    fn broadcast_mul_gradients_reduce() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2], true).unwrap();
        let s = Tensor::from_vec(vec![3.0], &[1], true).unwrap();
        let loss = sum_all(&mul(&x, &s).unwrap());
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![3.0; 4]);
        assert_eq!(s.grad().unwrap(), vec![10.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        // ln 4 for four equal-probability classes.
        let logits = Tensor::zeros(&[1, 4]);
        let loss = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss.data()[0] - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::zeros(&[1, 4]);
        let e = softmax_cross_entropy(&logits, &[4]).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Data);
    }

    #[test]
    fn shuffle_c4_g2_order() {
        let x = Tensor::from_vec(vec![0.0, 1.0, 2.0, 3.0], &[1, 4, 1, 1], false).unwrap();
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn shuffle_identity_when_one_group() {
        let x = Tensor::from_vec(vec![5.0, 6.0, 7.0], &[1, 3, 1, 1], false).unwrap();
        let y = channel_shuffle(&x, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn shuffle_rejects_non_dividing_groups() {
        let x = Tensor::zeros(&[1, 4, 1, 1]);
        let e = channel_shuffle(&x, 3).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Config);
    }

    #[test]
    fn shuffle_followed_by_inverse_restores() {
        // For C = g^2 the shuffle is an involution; use C=4, g=2.
        let x = Tensor::from_vec((0..4).map(|v| v as f64).collect(), &[1, 4, 1, 1], false).unwrap();
        let y = channel_shuffle(&channel_shuffle(&x, 2).unwrap(), 2).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn batch_norm_normalizes_batch() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0, 2.0, 0.0], &[2, 1, 2, 2], false).unwrap();
        let gamma = Tensor::ones(&[1]);
        let beta = Tensor::zeros(&[1]);
        let (y, mean, var) = batch_norm_train(&x, &gamma, &beta).unwrap();
        let m: f64 = y.data().iter().sum::<f64>() / 8.0;
        let v: f64 = y.data().iter().map(|&d| (d - m) * (d - m)).sum::<f64>() / 8.0;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-4);
        assert!((mean[0] - 3.25).abs() < 1e-12);
        assert!(var[0] > 0.0);
    }

    #[test]
    fn upsample_nearest_doubles() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2], false).unwrap();
        let y = upsample_nearest(&x, 4, 4).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[3], 2.0);
        assert_eq!(y.data()[15], 4.0);
    }
}
