//! Multi-scale group and depthwise convolution block.
//!
//! Three parallel branches over the same input: a 1x1 group-pointwise
//! convolution and depthwise convolutions at 3x3 and 5x5, fused by
//! elementwise addition. No branch carries a bias. In robust builds a random
//! projection convolution feeds the branches and a fraction of each branch's
//! filters is frozen random.

use super::BuildCtx;
use crate::error::Result;
use crate::nn::{depthwise_spec, pointwise_spec, Param};
use crate::robust::{MixedConv2d, RpfConv};
use crate::tensor::{add_n, Tensor};

pub struct Msgdc {
    pub gpc: MixedConv2d,
    pub dw3: MixedConv2d,
    pub dw5: MixedConv2d,
    pub projection: Option<RpfConv>,
    pub channels: usize,
}

impl Msgdc {
    pub fn new(name: &str, channels: usize, ctx: &BuildCtx) -> Result<Self> {
        ctx.check_channels(name, channels)?;
        let (fraction, sigma) = match &ctx.robust {
            Some(r) => (r.rpf_fraction, r.sigma),
            None => (0.0, None),
        };
        let gpc = MixedConv2d::new(
            &format!("{name}.gpc"),
            pointwise_spec(channels, channels, ctx.gpc_groups),
            fraction,
            sigma,
            ctx.init_seed,
        )?;
        let dw3 = MixedConv2d::new(
            &format!("{name}.dw3"),
            depthwise_spec(channels, 3),
            fraction,
            sigma,
            ctx.init_seed,
        )?;
        let dw5 = MixedConv2d::new(
            &format!("{name}.dw5"),
            depthwise_spec(channels, 5),
            fraction,
            sigma,
            ctx.init_seed,
        )?;
        let projection = match &ctx.robust {
            Some(r) if r.projection => {
                let p = RpfConv::new(&format!("{name}.proj"), channels, r.projection_kernel, r.sigma)?;
                ctx.registry.register_projection(&p);
                Some(p)
            }
            _ => None,
        };
        if ctx.robust.is_some() {
            ctx.registry.register_mixed(&gpc);
            ctx.registry.register_mixed(&dw3);
            ctx.registry.register_mixed(&dw5);
        }
        Ok(Self { gpc, dw3, dw5, projection, channels })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let u = match &self.projection {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        let a = self.gpc.forward(&u)?;
        let b = self.dw3.forward(&u)?;
        let c = self.dw5.forward(&u)?;
        add_n(&[&a, &b, &c])
    }

    pub fn params(&self) -> Vec<Param> {
        vec![self.gpc.trainable(), self.dw3.trainable(), self.dw5.trainable()]
    }

    /// Identity configuration: pointwise branch passes the input through,
    /// both depthwise branches contribute zero. Test helper.
    pub fn set_identity(&self) -> Result<()> {
        self.gpc.set_identity()?;
        self.dw3.set_zero()?;
        self.dw5.set_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> BuildCtx {
        let mut c = BuildCtx::new(3);
        c.shuffle_groups = 2;
        c
    }

    #[test]
    fn identity_configuration_passes_input() {
        let ctx = ctx();
        let m = Msgdc::new("m", 4, &ctx).unwrap();
        m.set_identity().unwrap();
        let x = Tensor::from_vec((0..64).map(|v| v as f64 / 5.0).collect(), &[1, 4, 4, 4], false).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let ctx = ctx();
        let m = Msgdc::new("m", 4, &ctx).unwrap();
        let x = Tensor::zeros(&[2, 4, 5, 5]);
        let y = m.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_branch_by_branch_reference() {
        let ctx = ctx();
        let m = Msgdc::new("m", 4, &ctx).unwrap();
        let x = Tensor::from_vec((0..144).map(|v| ((v * 31 % 17) as f64) / 7.0 - 1.0).collect(), &[1, 4, 6, 6], false)
            .unwrap();
        let y = m.forward(&x).unwrap();
        let a = m.gpc.forward(&x).unwrap();
        let b = m.dw3.forward(&x).unwrap();
        let c = m.dw5.forward(&x).unwrap();
        for i in 0..y.numel() {
            let expect = a.data()[i] + b.data()[i] + c.data()[i];
            assert!((y.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn group_mismatch_is_config_error() {
        let mut ctx = BuildCtx::new(3);
        ctx.gpc_groups = 3;
        let e = Msgdc::new("m", 4, &ctx).err().expect("config error");
        assert_eq!(e.kind, crate::error::ErrorKind::Config);
    }
}
