//! Cross-attention fusion of the frequency and spatial branches.
//!
//! The fused map is `sigma(theta_f * frequency_logits + theta_s *
//! spatial_map)`. Both branch terms enter the sigmoid pre-activation, which
//! avoids saturating an already-squashed frequency map. Every modality is
//! recalibrated by the shared map and its own per-channel weights.

use super::{BuildCtx, Emsca, Mfifa};
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::robust::NoiseSite;
use crate::tensor::{add, mul, reshape, sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Both branches computed from the same input and fused inside one
    /// sigmoid.
    Parallel,
    /// Spatial branch applied to the frequency-recalibrated features.
    Cascaded,
}

pub struct Emcam {
    pub mfifa: Option<Mfifa>,
    pub emsca: Option<Emsca>,
    pub theta_f: Param,
    pub theta_s: Param,
    pub theta_m: Vec<Param>,
    pub noise: Option<NoiseSite>,
    pub mode: FusionMode,
    pub modalities: usize,
    pub channels: usize,
}

pub struct EmcamOptions {
    pub use_dct: bool,
    pub with_mfifa: bool,
    pub with_emsca: bool,
    pub mode: FusionMode,
}

impl Default for EmcamOptions {
    fn default() -> Self {
        Self { use_dct: true, with_mfifa: true, with_emsca: true, mode: FusionMode::Parallel }
    }
}

impl Emcam {
    pub fn new(name: &str, channels: usize, modalities: usize, opts: &EmcamOptions, ctx: &BuildCtx) -> Result<Self> {
        if !opts.with_mfifa && !opts.with_emsca {
            return Err(Error::config("fusion block needs at least one branch enabled"));
        }
        let mfifa = if opts.with_mfifa {
            Some(Mfifa::new(&format!("{name}.mfifa"), channels, modalities, opts.use_dct, ctx)?)
        } else {
            None
        };
        let emsca = if opts.with_emsca {
            Some(Emsca::new(&format!("{name}.emsca"), channels, modalities, ctx)?)
        } else {
            None
        };
        let scalar = |label: String| Param::new(label, Tensor::from_vec(vec![1.0], &[1], true).unwrap(), true);
        let theta_f = scalar(format!("{name}.theta_f"));
        let theta_s = scalar(format!("{name}.theta_s"));
        let theta_m: Vec<Param> = (0..modalities)
            .map(|i| {
                Param::new(
                    format!("{name}.theta_m{i}"),
                    Tensor::from_vec(vec![1.0; channels], &[channels], true).unwrap(),
                    true,
                )
            })
            .collect();
        let noise = ctx.robust.as_ref().map(|r| {
            let s = NoiseSite::new(&format!("{name}.noise"), channels, r.noise_sigma);
            ctx.registry.register_site(&s);
            ctx.registry.register_rpan_scalar(&theta_f);
            ctx.registry.register_rpan_scalar(&theta_s);
            for p in &theta_m {
                ctx.registry.register_rpan_scalar(p);
            }
            s
        });
        Ok(Self { mfifa, emsca, theta_f, theta_s, theta_m, noise, mode: opts.mode, modalities, channels })
    }

    fn check_inputs(&self, xs: &[Tensor]) -> Result<()> {
        if xs.len() != self.modalities {
            return Err(Error::dimension(format!(
                "expected {} modalities, got {}",
                self.modalities,
                xs.len()
            )));
        }
        for t in &xs[1..] {
            if t.shape() != xs[0].shape() {
                return Err(Error::dimension(format!(
                    "modality shape mismatch: {:?} vs {:?}",
                    xs[0].shape(),
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    fn eta4(&self) -> Result<Option<Tensor>> {
        match &self.noise {
            Some(site) => {
                let e = site.eta()?;
                Ok(Some(reshape(&e, &[1, e.numel(), 1, 1])?))
            }
            None => Ok(None),
        }
    }

    /// Pre-sigmoid fusion of the enabled branches.
    pub fn attention_logits(&self, xs: &[Tensor]) -> Result<Tensor> {
        self.check_inputs(xs)?;
        let mut acc: Option<Tensor> = None;
        if let Some(mf) = &self.mfifa {
            let t = mul(&self.theta_f.tensor(), &mf.logits(xs)?)?;
            acc = Some(t);
        }
        if let Some(sp) = &self.emsca {
            let t = mul(&self.theta_s.tensor(), &sp.forward(xs)?)?;
            acc = Some(match acc {
                Some(prev) => add(&prev, &t)?,
                None => t,
            });
        }
        Ok(acc.expect("at least one branch"))
    }

    /// Shared multimodal attention map, entries strictly in (0, 1).
    pub fn attention_map(&self, xs: &[Tensor]) -> Result<Tensor> {
        let mut logits = self.attention_logits(xs)?;
        if let Some(e) = self.eta4()? {
            logits = mul(&logits, &e)?;
        }
        Ok(sigmoid(&logits))
    }

    /// Recalibrated per-modality representations.
    pub fn forward(&self, xs: &[Tensor]) -> Result<Vec<Tensor>> {
        self.check_inputs(xs)?;
        match self.mode {
            FusionMode::Parallel => {
                let map = self.attention_map(xs)?;
                let mut out = Vec::with_capacity(xs.len());
                for (i, x) in xs.iter().enumerate() {
                    let tm = reshape(&self.theta_m[i].tensor(), &[1, self.channels, 1, 1])?;
                    out.push(mul(&mul(x, &map)?, &tm)?);
                }
                Ok(out)
            }
            FusionMode::Cascaded => {
                let eta = self.eta4()?;
                let mut mid: Vec<Tensor> = Vec::with_capacity(xs.len());
                if let Some(mf) = &self.mfifa {
                    let mut f_logits = mul(&self.theta_f.tensor(), &mf.logits(xs)?)?;
                    if let Some(e) = &eta {
                        f_logits = mul(&f_logits, e)?;
                    }
                    let f_map = sigmoid(&f_logits);
                    for x in xs {
                        mid.push(mul(x, &f_map)?);
                    }
                } else {
                    mid.extend(xs.iter().cloned());
                }
                let stage2 = if let Some(sp) = &self.emsca {
                    let mut s_logits = mul(&self.theta_s.tensor(), &sp.forward(&mid)?)?;
                    if let Some(e) = &eta {
                        s_logits = mul(&s_logits, e)?;
                    }
                    Some(sigmoid(&s_logits))
                } else {
                    None
                };
                let mut out = Vec::with_capacity(xs.len());
                for (i, m) in mid.iter().enumerate() {
                    let tm = reshape(&self.theta_m[i].tensor(), &[1, self.channels, 1, 1])?;
                    let recal = match &stage2 {
                        Some(map) => mul(m, map)?,
                        None => m.clone(),
                    };
                    out.push(mul(&recal, &tm)?);
                }
                Ok(out)
            }
        }
    }

    pub fn params(&self) -> Vec<Param> {
        let mut ps = Vec::new();
        if let Some(mf) = &self.mfifa {
            ps.extend(mf.params());
        }
        if let Some(sp) = &self.emsca {
            ps.extend(sp.params());
        }
        ps.push(self.theta_f.clone());
        ps.push(self.theta_s.clone());
        ps.extend(self.theta_m.iter().cloned());
        if let Some(site) = &self.noise {
            ps.push(site.delta());
        }
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> BuildCtx {
        let mut c = BuildCtx::new(13);
        c.shuffle_groups = 2;
        c
    }

    fn opts() -> EmcamOptions {
        EmcamOptions { use_dct: false, ..Default::default() }
    }

    #[test]
    fn zero_scalars_give_uniform_half_and_halved_features() {
        let ctx = ctx();
        let e = Emcam::new("fu", 2, 2, &opts(), &ctx).unwrap();
        e.theta_f.set_data(vec![0.0]).unwrap();
        e.theta_s.set_data(vec![0.0]).unwrap();
        let a = Tensor::from_vec((0..32).map(|v| v as f64 / 3.0).collect(), &[1, 2, 4, 4], false).unwrap();
        let b = Tensor::from_vec((0..32).map(|v| -(v as f64) / 5.0).collect(), &[1, 2, 4, 4], false).unwrap();
        let map = e.attention_map(&[a.clone(), b.clone()]).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.5));
        let out = e.forward(&[a.clone(), b]).unwrap();
        for (o, x) in out[0].data().iter().zip(a.data()) {
            assert_eq!(*o, 0.5 * x);
        }
    }

    #[test]
    fn output_shapes_match_inputs_for_all_modality_counts() {
        for m in 1..=3usize {
            let ctx = ctx();
            let e = Emcam::new("fu", 2, m, &opts(), &ctx).unwrap();
            let xs: Vec<Tensor> = (0..m)
                .map(|i| Tensor::from_vec(vec![0.1 * (i as f64 + 1.0); 32], &[1, 2, 4, 4], false).unwrap())
                .collect();
            let out = e.forward(&xs).unwrap();
            assert_eq!(out.len(), m);
            for (o, x) in out.iter().zip(&xs) {
                assert_eq!(o.shape(), x.shape());
            }
        }
    }

    #[test]
    fn matches_composed_branch_reference() {
        let ctx = ctx();
        let e = Emcam::new("fu", 2, 2, &opts(), &ctx).unwrap();
        e.theta_f.set_data(vec![0.7]).unwrap();
        e.theta_s.set_data(vec![-0.3]).unwrap();
        let a = Tensor::from_vec((0..32).map(|v| ((v * 19 % 23) as f64) / 9.0).collect(), &[1, 2, 4, 4], false)
            .unwrap();
        let b = Tensor::from_vec((0..32).map(|v| ((v * 3 % 5) as f64) / 2.0 - 1.0).collect(), &[1, 2, 4, 4], false)
            .unwrap();
        let xs = [a, b];
        let out = e.forward(&xs).unwrap();

        let fl = e.mfifa.as_ref().unwrap().logits(&xs).unwrap();
        let sl = e.emsca.as_ref().unwrap().forward(&xs).unwrap();
        for i in 0..2 {
            for j in 0..32 {
                let logit = 0.7 * fl.data()[j] - 0.3 * sl.data()[j];
                let map = 1.0 / (1.0 + (-logit).exp());
                let expect = xs[i].data()[j] * map; // theta_m is 1
                assert!((out[i].data()[j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cascaded_and_parallel_share_parameter_shapes() {
        let ctx_a = ctx();
        let par = Emcam::new("fu", 4, 2, &opts(), &ctx_a).unwrap();
        let ctx_b = ctx();
        let cas = Emcam::new(
            "fu",
            4,
            2,
            &EmcamOptions { mode: FusionMode::Cascaded, use_dct: false, ..Default::default() },
            &ctx_b,
        )
        .unwrap();
        let count = |e: &Emcam| e.params().iter().map(|p| p.numel()).sum::<usize>();
        assert_eq!(count(&par), count(&cas));
        // Cascaded mode still produces per-modality outputs of input shape.
        let xs: Vec<Tensor> = (0..2).map(|_| Tensor::full(&[1, 4, 4, 4], 0.3)).collect();
        let out = cas.forward(&xs).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].shape(), xs[0].shape());
    }

    #[test]
    fn needs_at_least_one_branch() {
        let ctx = ctx();
        let e = Emcam::new(
            "fu",
            2,
            1,
            &EmcamOptions { with_mfifa: false, with_emsca: false, use_dct: false, mode: FusionMode::Parallel },
            &ctx,
        );
        assert!(e.is_err());
    }
}
