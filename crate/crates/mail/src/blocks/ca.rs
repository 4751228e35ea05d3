//! Channel attention with multi-perspective global pooling.
//!
//! The per-channel descriptor combines global max, average and min pooling
//! as `(GMP + GAP + GMN) + (GMP - GAP - GMN)`, passes through two fully
//! connected layers with a ReLU between, is scaled by the learnable
//! per-channel modulation and squashed by a sigmoid; the input is
//! recalibrated by the resulting map.

use super::BuildCtx;
use crate::error::Result;
use crate::nn::{Linear, Param};
use crate::robust::NoiseSite;
use crate::tensor::{
    add, global_pool, mul, relu, reshape, sigmoid, sub, GlobalPoolKind, Tensor,
};

pub struct ChannelAttention {
    pub fc1: Linear,
    pub fc2: Linear,
    pub theta_x: Param,
    pub noise: Option<NoiseSite>,
    pub channels: usize,
}

impl ChannelAttention {
    pub fn new(name: &str, channels: usize, ctx: &BuildCtx) -> Result<Self> {
        let hidden = (channels / ctx.ca_reduction).max(1);
        let fc1 = Linear::new(&format!("{name}.fc1"), channels, hidden, ctx.init_seed)?;
        let fc2 = Linear::new(&format!("{name}.fc2"), hidden, channels, ctx.init_seed)?;
        let theta_x = Param::new(
            format!("{name}.theta_x"),
            Tensor::from_vec(vec![1.0; channels], &[channels], true)?,
            true,
        );
        let noise = ctx.robust.as_ref().map(|r| {
            let s = NoiseSite::new(&format!("{name}.noise"), channels, r.noise_sigma);
            ctx.registry.register_site(&s);
            ctx.registry.register_rpan_scalar(&theta_x);
            s
        });
        Ok(Self { fc1, fc2, theta_x, noise, channels })
    }

    /// Identity-configured attention for closed-form tests: both fully
    /// connected stages are square identity maps (requires reduction 1).
    pub fn identity(name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::identity(&format!("{name}.fc1"), channels)?,
            fc2: Linear::identity(&format!("{name}.fc2"), channels)?,
            theta_x: Param::new(
                format!("{name}.theta_x"),
                Tensor::from_vec(vec![1.0; channels], &[channels], true)?,
                true,
            ),
            noise: None,
            channels,
        })
    }

    /// The `[B, C]` attention map.
    pub fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        let c = x.shape()[1];
        let flat = |t: &Tensor| reshape(t, &[b, c]);
        let gmp = flat(&global_pool(x, GlobalPoolKind::Max)?)?;
        let gap = flat(&global_pool(x, GlobalPoolKind::Avg)?)?;
        let gmn = flat(&global_pool(x, GlobalPoolKind::Min)?)?;
        let sum3 = add(&add(&gmp, &gap)?, &gmn)?;
        let mu = sub(&sub(&gmp, &gap)?, &gmn)?;
        let d = add(&sum3, &mu)?;
        let f = self.fc2.forward(&relu(&self.fc1.forward(&d)?))?;
        let mut pre = mul(&f, &self.theta_x.tensor())?;
        if let Some(site) = &self.noise {
            pre = mul(&pre, &site.eta()?)?;
        }
        Ok(sigmoid(&pre))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let b = x.shape()[0];
        let a = self.attention(x)?;
        let a4 = reshape(&a, &[b, self.channels, 1, 1])?;
        mul(x, &a4)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut ps = self.fc1.params();
        ps.extend(self.fc2.params());
        ps.push(self.theta_x.clone());
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
    fn zero_input_identity_f_gives_half_map_zero_output() {
        let ca = ChannelAttention::identity("ca", 3).unwrap();
        let x = Tensor::zeros(&[2, 3, 4, 4]);
        let a = ca.attention(&x).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.5));
        let y = ca.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_field_closed_form() {
        // Positive constant c: descriptor = 2c, output = c * sigmoid(2c).
        let c = 0.75;
        let ca = ChannelAttention::identity("ca", 2).unwrap();
        let x = Tensor::full(&[1, 2, 3, 3], c);
        let y = ca.forward(&x).unwrap();
        let expect = c / (1.0 + (-2.0 * c).exp());
        for &v in y.data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_reference_evaluation() {
        // Identity f keeps the algebra tractable; reference computes the
        // whole map per channel with plain scalar loops.
        let ca = ChannelAttention::identity("ca", 2).unwrap();
        let data: Vec<f64> = (0..18).map(|v| ((v * 13 % 7) as f64) / 3.0 - 1.0).collect();
        let x = Tensor::from_vec(data.clone(), &[1, 2, 3, 3], false).unwrap();
        let y = ca.forward(&x).unwrap();
        for ch in 0..2 {
            let plane = &data[ch * 9..(ch + 1) * 9];
            let gmp = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let gmn = plane.iter().cloned().fold(f64::INFINITY, f64::min);
            let gap = plane.iter().sum::<f64>() / 9.0;
            let d = (gmp + gap + gmn) + (gmp - gap - gmn);
            let a = 1.0 / (1.0 + (-d.max(0.0)).exp());
            for (i, &p) in plane.iter().enumerate() {
                assert!((y.data()[ch * 9 + i] - p * a).abs() < 1e-12, "channel {ch} pixel {i}");
            }
        }
    }
}
