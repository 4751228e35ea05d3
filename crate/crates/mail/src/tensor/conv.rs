//! 2-D convolution (cross-correlation) with groups, stride and padding.
//!
//! Weight layout is `[C_out, C_in / groups, k_h, k_w]`. Depthwise convolution
//! is `groups == C_in` with one input channel per filter; grouped pointwise is
//! a 1x1 kernel with `groups > 1`.

use super::{any_requires_grad, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding chosen so `H_out = ceil(H / stride)`; preserves the
    /// spatial extent at stride 1.
    Same,
    /// Explicit symmetric zero padding.
    Explicit(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub groups: usize,
    pub stride: usize,
    pub padding: Padding,
    pub channels_in: usize,
    pub channels_out: usize,
}

impl ConvSpec {
    pub fn new(kernel: (usize, usize), channels_in: usize, channels_out: usize) -> Self {
        Self { kernel, groups: 1, stride: 1, padding: Padding::Same, channels_in, channels_out }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.stride == 0 {
            return Err(Error::config("conv groups and stride must be positive"));
        }
        if self.channels_in % self.groups != 0 || self.channels_out % self.groups != 0 {
            return Err(Error::config(format!(
                "conv groups {} must divide channels_in {} and channels_out {}",
                self.groups, self.channels_in, self.channels_out
            )));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 {
            return Err(Error::config("conv kernel extents must be positive"));
        }
        Ok(())
    }

    /// (pad_top, pad_left, H_out, W_out) for an input of extent (h, w).
    pub fn geometry(&self, h: usize, w: usize) -> Result<(usize, usize, usize, usize)> {
        let (kh, kw) = self.kernel;
        let s = self.stride;
        match self.padding {
            Padding::Same => {
                let out_h = h.div_ceil(s);
                let out_w = w.div_ceil(s);
                let pad_h = ((out_h - 1) * s + kh).saturating_sub(h);
                let pad_w = ((out_w - 1) * s + kw).saturating_sub(w);
                Ok((pad_h / 2, pad_w / 2, out_h, out_w))
            }
            Padding::Explicit(p) => {
                if h + 2 * p < kh || w + 2 * p < kw {
                    return Err(Error::dimension(format!(
                        "conv kernel {}x{} exceeds padded input {}x{}",
                        kh,
                        kw,
                        h + 2 * p,
                        w + 2 * p
                    )));
                }
                Ok((p, p, (h + 2 * p - kh) / s + 1, (w + 2 * p - kw) / s + 1))
            }
        }
    }

    /// Total zero padding on each spatial axis (top+bottom, left+right).
    fn pad_totals(&self, h: usize, w: usize) -> (usize, usize) {
        let (kh, kw) = self.kernel;
        match self.padding {
            Padding::Same => {
                let out_h = h.div_ceil(self.stride);
                let out_w = w.div_ceil(self.stride);
                (
                    ((out_h - 1) * self.stride + kh).saturating_sub(h),
                    ((out_w - 1) * self.stride + kw).saturating_sub(w),
                )
            }
            Padding::Explicit(p) => (2 * p, 2 * p),
        }
    }
}

fn pad_channel(src: &[f64], h: usize, w: usize, pt: usize, pl: usize, _ph: usize, pw: usize, dst: &mut [f64]) {
    dst.iter_mut().for_each(|v| *v = 0.0);
    for r in 0..h {
        let drow = (r + pt) * pw + pl;
        dst[drow..drow + w].copy_from_slice(&src[r * w..r * w + w]);
    }
}

/// 2-D grouped convolution of a `[B, C, H, W]` input.
pub fn conv2d(input: &Tensor, weights: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    spec.validate()?;
    let sh = input.shape();
    if sh.len() != 4 {
        return Err(Error::dimension(format!("conv2d expects 4-D input, got {:?}", sh)));
    }
    let (b, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if c != spec.channels_in {
        return Err(Error::dimension(format!(
            "conv2d channel axis mismatch: input has {} channels, spec expects {}",
            c, spec.channels_in
        )));
    }
    let (kh, kw) = spec.kernel;
    let cg_in = spec.channels_in / spec.groups;
    let cg_out = spec.channels_out / spec.groups;
    let expect_w = [spec.channels_out, cg_in, kh, kw];
    if weights.shape() != expect_w {
        return Err(Error::dimension(format!(
            "conv2d weight shape {:?} does not match spec {:?}",
            weights.shape(),
            expect_w
        )));
    }
    let (pt, pl, out_h, out_w) = spec.geometry(h, w)?;
    let (pad_h_total, pad_w_total) = spec.pad_totals(h, w);
    let (ph, pw) = (h + pad_h_total, w + pad_w_total);
    let s = spec.stride;
    let c_out = spec.channels_out;

    let xd = input.data();
    let wd = weights.data();
    let mut out = vec![0.0; b * c_out * out_h * out_w];
    let mut padded = vec![0.0; ph * pw];
    let kvol = cg_in * kh * kw;

    for bi in 0..b {
        for g in 0..spec.groups {
            for icg in 0..cg_in {
                let ic = g * cg_in + icg;
                pad_channel(&xd[(bi * c + ic) * h * w..(bi * c + ic + 1) * h * w], h, w, pt, pl, ph, pw, &mut padded);
                for ocg in 0..cg_out {
                    let oc = g * cg_out + ocg;
                    let wbase = oc * kvol + icg * kh * kw;
                    let obase = (bi * c_out + oc) * out_h * out_w;
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let wv = wd[wbase + ki * kw + kj];
                            if wv == 0.0 {
                                continue;
                            }
                            for oh in 0..out_h {
                                let irow = (oh * s + ki) * pw + kj;
                                let orow = obase + oh * out_w;
                                if s == 1 {
                                    let src = &padded[irow..irow + out_w];
                                    let dst = &mut out[orow..orow + out_w];
                                    for (d, &v) in dst.iter_mut().zip(src) {
                                        *d += wv * v;
                                    }
                                } else {
                                    for ow in 0..out_w {
                                        out[orow + ow] += wv * padded[irow + ow * s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let backward = if any_requires_grad(&[input, weights]) {
        let input_c = input.clone();
        let weights_c = weights.clone();
        let spec_c = *spec;
        Some(Box::new(move |g: &[f64]| {
            let xd = input_c.data();
            let wd = weights_c.data();
            let mut gw = if weights_c.requires_grad() { vec![0.0; wd.len()] } else { Vec::new() };
            let mut gx = if input_c.requires_grad() { vec![0.0; xd.len()] } else { Vec::new() };
            let mut padded = vec![0.0; ph * pw];
            let mut gpadded = vec![0.0; ph * pw];
            let groups = spec_c.groups;

            for bi in 0..b {
                for gr in 0..groups {
                    for icg in 0..cg_in {
                        let ic = gr * cg_in + icg;
                        pad_channel(
                            &xd[(bi * c + ic) * h * w..(bi * c + ic + 1) * h * w],
                            h,
                            w,
                            pt,
                            pl,
                            ph,
                            pw,
                            &mut padded,
                        );
                        if input_c.requires_grad() {
                            gpadded.iter_mut().for_each(|v| *v = 0.0);
                        }
                        for ocg in 0..cg_out {
                            let oc = gr * cg_out + ocg;
                            let wbase = oc * kvol + icg * kh * kw;
                            let obase = (bi * c_out + oc) * out_h * out_w;
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let widx = wbase + ki * kw + kj;
                                    let wv = wd[widx];
                                    let mut acc = 0.0;
                                    for oh in 0..out_h {
                                        let irow = (oh * s + ki) * pw + kj;
                                        let orow = obase + oh * out_w;
                                        if s == 1 {
                                            let src = &padded[irow..irow + out_w];
                                            let gout = &g[orow..orow + out_w];
                                            if !gw.is_empty() {
                                                for (x, gv) in src.iter().zip(gout) {
                                                    acc += x * gv;
                                                }
                                            }
                                            if !gx.is_empty() && wv != 0.0 {
                                                let gp = &mut gpadded[irow..irow + out_w];
                                                for (p, gv) in gp.iter_mut().zip(gout) {
                                                    *p += wv * gv;
                                                }
                                            }
                                        } else {
                                            for ow in 0..out_w {
                                                let gv = g[orow + ow];
                                                if !gw.is_empty() {
                                                    acc += padded[irow + ow * s] * gv;
                                                }
                                                if !gx.is_empty() {
                                                    gpadded[irow + ow * s] += wv * gv;
                                                }
                                            }
                                        }
                                    }
                                    if !gw.is_empty() {
                                        gw[widx] += acc;
                                    }
                                }
                            }
                        }
                        if !gx.is_empty() {
                            let dst = &mut gx[(bi * c + ic) * h * w..(bi * c + ic + 1) * h * w];
                            for r in 0..h {
                                let srow = (r + pt) * pw + pl;
                                for col in 0..w {
                                    dst[r * w + col] += gpadded[srow + col];
                                }
                            }
                        }
                    }
                }
            }
            if !gx.is_empty() {
                input_c.accumulate_grad(&gx);
            }
            if !gw.is_empty() {
                weights_c.accumulate_grad(&gw);
            }
        }) as Box<dyn Fn(&[f64])>)
    } else {
        None
    };

    Ok(Tensor::from_op(
        out,
        vec![b, c_out, out_h, out_w],
        vec![input.clone(), weights.clone()],
        backward,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{mul, sum_all};

    #[test]
    fn identity_pointwise_depthwise() {
        // 1x1 kernel of value 1, groups = C: output equals input.
        let x = Tensor::from_vec((0..12).map(|v| v as f64).collect(), &[1, 3, 2, 2], false).unwrap();
        let w = Tensor::ones(&[3, 1, 1, 1]);
        let spec = ConvSpec::new((1, 1), 3, 3).with_groups(3);
        let y = conv2d(&x, &w, &spec).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = Tensor::from_vec((0..16).map(|v| v as f64).collect(), &[1, 1, 4, 4], false).unwrap();
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let spec = ConvSpec::new((3, 3), 1, 1);
        let y = conv2d(&x, &w, &spec).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_padding_preserves_extent_at_stride_one() {
        let x = Tensor::zeros(&[1, 2, 5, 7]);
        let w = Tensor::zeros(&[4, 2, 3, 3]);
        let spec = ConvSpec::new((3, 3), 2, 4);
        let y = conv2d(&x, &w, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 4, 5, 7]);
    }

    #[test]
    fn stride_two_halves_extent() {
        let x = Tensor::zeros(&[1, 1, 8, 8]);
        let w = Tensor::zeros(&[1, 1, 3, 3]);
        let spec = ConvSpec::new((3, 3), 1, 1).with_stride(2);
        let y = conv2d(&x, &w, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn bad_groups_is_config_error() {
        let spec = ConvSpec::new((3, 3), 4, 4).with_groups(3);
        let e = spec.validate().unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Config);
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let spec = ConvSpec::new((3, 3), 3, 1);
        let e = conv2d(&x, &w, &spec).unwrap_err();
        assert!(e.message.contains("channel"), "{}", e.message);
    }

    #[test]
    fn weight_gradient_matches_hand_value() {
        // y = conv(x, w) with 1x1 kernel; loss = sum(y*y) on a single pixel.
        let x = Tensor::from_vec(vec![3.0], &[1, 1, 1, 1], true).unwrap();
        let w = Tensor::from_vec(vec![2.0], &[1, 1, 1, 1], true).unwrap();
        let spec = ConvSpec::new((1, 1), 1, 1);
        let y = conv2d(&x, &w, &spec).unwrap();
        let loss = sum_all(&mul(&y, &y).unwrap());
        loss.backward().unwrap();
        // y = 6, dL/dy = 12, dL/dw = 12*x = 36, dL/dx = 12*w = 24.
        assert_eq!(w.grad().unwrap(), vec![36.0]);
        assert_eq!(x.grad().unwrap(), vec![24.0]);
    }
}
