//! Spatial-domain cross attention.
//!
//! A shared multi-scale convolution feeds complementary 2x2 average and max
//! pooling (`S`), applied once and twice for a two-level spatial hierarchy.
//! Paired modalities (`i` with `m - i + 1`) exchange their base maps; each
//! pair's fused terms are upsampled back to the input resolution, scaled by a
//! learnable weight and summed. The sigmoid is deferred to the fusion module.

use super::{BuildCtx, Msgdc};
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::robust::NoiseSite;
use crate::tensor::{
    add, add_n, local_pool, mul, upsample_nearest, LocalPoolKind, Tensor,
};

pub struct Emsca {
    pub msgdc: Msgdc,
    pub theta: Vec<Param>,
    pub noise: Option<NoiseSite>,
    pub modalities: usize,
}

impl Emsca {
    pub fn new(name: &str, channels: usize, modalities: usize, ctx: &BuildCtx) -> Result<Self> {
        let msgdc = Msgdc::new(&format!("{name}.msgdc"), channels, ctx)?;
        let theta: Vec<Param> = (0..modalities)
            .map(|i| Param::new(format!("{name}.theta{i}"), Tensor::from_vec(vec![1.0], &[1], true).unwrap(), true))
            .collect();
        let noise = ctx.robust.as_ref().map(|r| {
            let s = NoiseSite::new(&format!("{name}.noise"), channels, r.noise_sigma);
            ctx.registry.register_site(&s);
            for p in &theta {
                ctx.registry.register_rpan_scalar(p);
            }
            s
        });
        Ok(Self { msgdc, theta, noise, modalities })
    }

    /// `S(x)`: average plus max 2x2/stride-2 pooling of the multi-scale
    /// convolution output; halves the spatial extent.
    pub fn s_map(&self, x: &Tensor) -> Result<Tensor> {
        let m = self.msgdc.forward(x)?;
        add(&local_pool(&m, LocalPoolKind::Avg)?, &local_pool(&m, LocalPoolKind::Max)?)
    }

    /// Pre-sigmoid spatial attention map at the input resolution.
    pub fn forward(&self, xs: &[Tensor]) -> Result<Tensor> {
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
        let (h, w) = (xs[0].shape()[2], xs[0].shape()[3]);
        let eta = match &self.noise {
            Some(site) => {
                let e = site.eta()?;
                Some(crate::tensor::reshape(&e, &[1, e.numel(), 1, 1])?)
            }
            None => None,
        };
        let base: Vec<Tensor> = xs.iter().map(|x| self.s_map(x)).collect::<Result<_>>()?;
        let mut terms = Vec::with_capacity(self.modalities);
        for i in 0..self.modalities {
            let pair = self.modalities - 1 - i;
            let deep = self.s_map(&base[i])?;
            let fused = add(
                &add(
                    &upsample_nearest(&base[i], h, w)?,
                    &upsample_nearest(&base[pair], h, w)?,
                )?,
                &upsample_nearest(&deep, h, w)?,
            )?;
            let mut term = mul(&self.theta[i].tensor(), &fused)?;
            if let Some(e) = &eta {
                term = mul(&term, e)?;
            }
            terms.push(term);
        }
        let refs: Vec<&Tensor> = terms.iter().collect();
        add_n(&refs)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut ps = self.msgdc.params();
        ps.extend(self.theta.iter().cloned());
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
        let mut c = BuildCtx::new(11);
        c.shuffle_groups = 2;
        c
    }

    #[test]
    fn identity_msgdc_constant_field() {
        // S of a constant field c is 2c (avg + max), at half resolution.
        let ctx = ctx();
        let e = Emsca::new("sp", 2, 1, &ctx).unwrap();
        e.msgdc.set_identity().unwrap();
        let c = 0.6;
        let x = Tensor::full(&[1, 2, 4, 4], c);
        let s = e.s_map(&x).unwrap();
        assert_eq!(s.shape(), &[1, 2, 2, 2]);
        assert!(s.data().iter().all(|&v| (v - 2.0 * c).abs() < 1e-15));
    }

    #[test]
    fn identity_msgdc_two_by_two_value() {
        // S([[1,2],[3,4]]) = avg + max = 2.5 + 4 = 6.5 at 1x1.
        let ctx = ctx();
        let e = Emsca::new("sp", 2, 1, &ctx).unwrap();
        e.msgdc.set_identity().unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0], &[1, 2, 2, 2], false).unwrap();
        let s = e.s_map(&x).unwrap();
        assert_eq!(s.data(), &[6.5, 6.5]);
    }

    #[test]
    fn zero_theta_gives_zero_map() {
        let ctx = ctx();
        let e = Emsca::new("sp", 2, 2, &ctx).unwrap();
        for p in &e.theta {
            p.set_data(vec![0.0]).unwrap();
        }
        let a = Tensor::from_vec((0..32).map(|v| v as f64).collect(), &[1, 2, 4, 4], false).unwrap();
        let b = Tensor::from_vec((0..32).map(|v| -(v as f64)).collect(), &[1, 2, 4, 4], false).unwrap();
        let map = e.forward(&[a, b]).unwrap();
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_modality_self_pairs() {
        // m = 1: output = theta * (2 * up(S(x)) + up(S(S(x)))).
        let ctx = ctx();
        let e = Emsca::new("sp", 2, 1, &ctx).unwrap();
        e.msgdc.set_identity().unwrap();
        let x = Tensor::from_vec((0..32).map(|v| ((v * 7 % 9) as f64) / 3.0).collect(), &[1, 2, 4, 4], false).unwrap();
        let map = e.forward(std::slice::from_ref(&x)).unwrap();
        let s = e.s_map(&x).unwrap();
        let ss = e.s_map(&s).unwrap();
        let expect = add(
            &crate::tensor::scale_const(&upsample_nearest(&s, 4, 4).unwrap(), 2.0),
            &upsample_nearest(&ss, 4, 4).unwrap(),
        )
        .unwrap();
        for (a, b) in map.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_modalities_match_per_term_reference() {
        let ctx = ctx();
        let e = Emsca::new("sp", 2, 2, &ctx).unwrap();
        e.msgdc.set_identity().unwrap();
        e.theta[0].set_data(vec![2.0]).unwrap();
        e.theta[1].set_data(vec![-0.5]).unwrap();
        let a = Tensor::from_vec((0..32).map(|v| ((v * 11 % 13) as f64) / 4.0).collect(), &[1, 2, 4, 4], false)
            .unwrap();
        let b = Tensor::from_vec((0..32).map(|v| ((v * 5 % 7) as f64) / 2.0 - 1.0).collect(), &[1, 2, 4, 4], false)
            .unwrap();
        let map = e.forward(&[a.clone(), b.clone()]).unwrap();
        let (sa, sb) = (e.s_map(&a).unwrap(), e.s_map(&b).unwrap());
        let up = |t: &Tensor| upsample_nearest(t, 4, 4).unwrap();
        let t0 = crate::tensor::scale_const(
            &add(&add(&up(&sa), &up(&sb)).unwrap(), &up(&e.s_map(&sa).unwrap())).unwrap(),
            2.0,
        );
        let t1 = crate::tensor::scale_const(
            &add(&add(&up(&sb), &up(&sa)).unwrap(), &up(&e.s_map(&sb).unwrap())).unwrap(),
            -0.5,
        );
        let expect = add(&t0, &t1).unwrap();
        for (x, y) in map.data().iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_extent_is_dimension_error() {
        let ctx = ctx();
        let e = Emsca::new("sp", 2, 1, &ctx).unwrap();
        let x = Tensor::zeros(&[1, 2, 1, 1]);
        assert_eq!(e.forward(&[x]).unwrap_err().kind, crate::error::ErrorKind::Dimension);
    }
}
