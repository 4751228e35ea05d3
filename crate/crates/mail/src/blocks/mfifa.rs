//! Frequency-domain information fusion attention.
//!
//! Per modality, the (optionally DCT-transformed) feature map is decomposed
//! into low-frequency channel summaries, high-frequency residuals and their
//! difference. Per-modality learnable weights modulate the components and the
//! modulated components are summed across modalities into one full-resolution
//! frequency attention map.

use super::BuildCtx;
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::robust::NoiseSite;
use crate::tensor::{
    add, add_n, dct2d, global_pool, mul, sigmoid, sub, GlobalPoolKind, Tensor,
};

/// Frequency components of one feature map. The `lw*` and `h3` entries are
/// per-channel summaries of shape `[B, C, 1, 1]`; `h1`, `h2`, `h` and `a`
/// carry full spatial resolution.
pub struct FreqComponents {
    pub lw1: Tensor,
    pub lw2: Tensor,
    pub lw: Tensor,
    pub h1: Tensor,
    pub h2: Tensor,
    pub h3: Tensor,
    pub h: Tensor,
    pub a: Tensor,
}

/// Decompose a feature map into its frequency components.
///
/// With `use_dct` the map is first replaced by its per-channel 2-D DCT.
/// Identities: `h1 + lw1 = x`, `h2 + lw2 = x`, `a = h - lw` (broadcast).
pub fn mfifa_decompose(x: &Tensor, use_dct: bool) -> Result<FreqComponents> {
    let base = if use_dct { dct2d(x, false)? } else { x.clone() };
    let lw1 = global_pool(&base, GlobalPoolKind::Min)?;
    let lw2 = global_pool(&base, GlobalPoolKind::Avg)?;
    let lw = add(&lw1, &lw2)?;
    let h1 = sub(&base, &lw1)?;
    let h2 = sub(&base, &lw2)?;
    let h3 = global_pool(&base, GlobalPoolKind::Max)?;
    let h = add(&add(&h1, &h2)?, &h3)?;
    let a = sub(&h, &lw)?;
    Ok(FreqComponents { lw1, lw2, lw, h1, h2, h3, h, a })
}

pub struct Mfifa {
    pub alpha: Vec<Param>,
    pub wp: Vec<Param>,
    pub gamma: Vec<Param>,
    pub use_dct: bool,
    pub noise: Option<NoiseSite>,
    pub modalities: usize,
}

impl Mfifa {
    pub fn new(name: &str, channels: usize, modalities: usize, use_dct: bool, ctx: &BuildCtx) -> Result<Self> {
        let scalar = |label: String| Param::new(label, Tensor::from_vec(vec![1.0], &[1], true).unwrap(), true);
        let alpha: Vec<Param> = (0..modalities).map(|i| scalar(format!("{name}.alpha{i}"))).collect();
        let wp: Vec<Param> = (0..modalities).map(|i| scalar(format!("{name}.wp{i}"))).collect();
        let gamma: Vec<Param> = (0..modalities).map(|i| scalar(format!("{name}.gamma{i}"))).collect();
        let noise = ctx.robust.as_ref().map(|r| {
            let s = NoiseSite::new(&format!("{name}.noise"), channels, r.noise_sigma);
            ctx.registry.register_site(&s);
            for p in alpha.iter().chain(&wp).chain(&gamma) {
                ctx.registry.register_rpan_scalar(p);
            }
            s
        });
        Ok(Self { alpha, wp, gamma, use_dct, noise, modalities })
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

    /// Pre-sigmoid fused frequency map at full resolution.
    pub fn logits(&self, xs: &[Tensor]) -> Result<Tensor> {
        self.check_inputs(xs)?;
        let eta = match &self.noise {
            Some(site) => Some(site.eta()?),
            None => None,
        };
        // eta is [C]; reshape so it broadcasts over [B, C, *, *].
        let eta4 = match &eta {
            Some(e) => Some(crate::tensor::reshape(e, &[1, e.numel(), 1, 1])?),
            None => None,
        };
        let mut terms: Vec<Tensor> = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let parts = mfifa_decompose(x, self.use_dct)?;
            let mut low = mul(&self.alpha[i].tensor(), &parts.lw)?;
            let mut high = mul(&self.wp[i].tensor(), &parts.h)?;
            let mut diff = mul(&self.gamma[i].tensor(), &parts.a)?;
            if let Some(e) = &eta4 {
                low = mul(&low, e)?;
                high = mul(&high, e)?;
                diff = mul(&diff, e)?;
            }
            terms.push(add(&add(&high, &diff)?, &low)?);
        }
        let refs: Vec<&Tensor> = terms.iter().collect();
        add_n(&refs)
    }

    /// Frequency attention map with entries in (0, 1).
    pub fn forward(&self, xs: &[Tensor]) -> Result<Tensor> {
        Ok(sigmoid(&self.logits(xs)?))
    }

    pub fn params(&self) -> Vec<Param> {
        let mut ps: Vec<Param> = Vec::new();
        ps.extend(self.alpha.iter().cloned());
        ps.extend(self.wp.iter().cloned());
        ps.extend(self.gamma.iter().cloned());
        if let Some(site) = &self.noise {
            ps.push(site.delta());
        }
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_closed_forms() {
        // lw = 2c, h = c, a = -c for a constant field c without the DCT.
        let c = 1.75;
        let x = Tensor::full(&[1, 2, 3, 3], c);
        let p = mfifa_decompose(&x, false).unwrap();
        assert!(p.lw.data().iter().all(|&v| (v - 2.0 * c).abs() < 1e-15));
        assert!(p.h.data().iter().all(|&v| (v - c).abs() < 1e-15));
        assert!(p.a.data().iter().all(|&v| (v + c).abs() < 1e-15));
    }

    #[test]
    fn rearrangement_identities_hold() {
        let data: Vec<f64> = (0..32).map(|v| ((v * 37 % 19) as f64) / 4.0 - 2.0).collect();
        let x = Tensor::from_vec(data, &[2, 2, 2, 4], false).unwrap();
        let p = mfifa_decompose(&x, false).unwrap();
        let back1 = add(&p.h1, &p.lw1).unwrap();
        let back2 = add(&p.h2, &p.lw2).unwrap();
        let alt = sub(&p.h, &p.lw).unwrap();
        for i in 0..x.numel() {
            assert!((back1.data()[i] - x.data()[i]).abs() < 1e-12);
            assert!((back2.data()[i] - x.data()[i]).abs() < 1e-12);
            assert!((alt.data()[i] - p.a.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_input_matches_scalar_reference() {
        let ctx = BuildCtx::new(2);
        let m = Mfifa::new("mf", 1, 1, false, &ctx).unwrap();
        let vals = [0.4, -1.2, 2.2, 0.1];
        let x = Tensor::from_vec(vals.to_vec(), &[1, 1, 2, 2], false).unwrap();
        let a = m.forward(&[x]).unwrap();
        let mn = -1.2;
        let av = vals.iter().sum::<f64>() / 4.0;
        let mx = 2.2;
        let lw = mn + av;
        for (i, &v) in vals.iter().enumerate() {
            let h = (v - mn) + (v - av) + mx;
            let logit = lw + h + (h - lw);
            let expect = 1.0 / (1.0 + (-logit).exp());
            assert!((a.data()[i] - expect).abs() < 1e-12, "pixel {i}");
        }
    }

    #[test]
    fn zero_weights_give_uniform_half_map() {
        let ctx = BuildCtx::new(2);
        let m = Mfifa::new("mf", 2, 2, false, &ctx).unwrap();
        for p in m.alpha.iter().chain(&m.wp).chain(&m.gamma) {
            p.set_data(vec![0.0]).unwrap();
        }
        let a = Tensor::from_vec((0..16).map(|v| v as f64).collect(), &[1, 2, 2, 4], false).unwrap();
        let b = Tensor::from_vec((0..16).map(|v| (16 - v) as f64).collect(), &[1, 2, 2, 4], false).unwrap();
        let map = m.forward(&[a, b]).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn modality_shape_mismatch_is_dimension_error() {
        let ctx = BuildCtx::new(2);
        let m = Mfifa::new("mf", 2, 2, false, &ctx).unwrap();
        let a = Tensor::zeros(&[1, 2, 2, 2]);
        let b = Tensor::zeros(&[1, 2, 3, 3]);
        assert_eq!(m.forward(&[a, b]).unwrap_err().kind, crate::error::ErrorKind::Dimension);
    }

    #[test]
    fn map_entries_strictly_inside_unit_interval() {
        let ctx = BuildCtx::new(2);
        let m = Mfifa::new("mf", 2, 2, false, &ctx).unwrap();
        let a = Tensor::from_vec((0..16).map(|v| (v as f64) * 100.0).collect(), &[1, 2, 2, 4], false).unwrap();
        let b = Tensor::from_vec((0..16).map(|v| (v as f64) * -100.0).collect(), &[1, 2, 2, 4], false).unwrap();
        let map = m.forward(&[a, b]).unwrap();
        assert!(map.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
