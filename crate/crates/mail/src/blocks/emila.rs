//! Multi-scale information learning attention module: multi-scale
//! convolution, channel shuffle, channel attention, a group-pointwise
//! restoration and a residual from the module input.

use super::{BuildCtx, ChannelAttention, Msgdc};
use crate::error::{Error, Result};
use crate::nn::{pointwise_spec, Conv2d, Param};
use crate::tensor::{add, channel_shuffle, Tensor};

pub struct Emila {
    pub msgdc: Msgdc,
    pub ca: ChannelAttention,
    pub gpc_out: Conv2d,
    pub shuffle_groups: usize,
    pub channels: usize,
}

impl Emila {
    pub fn new(name: &str, channels: usize, ctx: &BuildCtx) -> Result<Self> {
        let msgdc = Msgdc::new(&format!("{name}.msgdc"), channels, ctx)?;
        let ca = ChannelAttention::new(&format!("{name}.ca"), channels, ctx)?;
        let gpc_out = Conv2d::new(
            &format!("{name}.gpc_out"),
            pointwise_spec(channels, channels, ctx.gpc_groups),
            ctx.init_seed,
        )?;
        Ok(Self { msgdc, ca, gpc_out, shuffle_groups: ctx.shuffle_groups, channels })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape()[1] != self.channels {
            return Err(Error::config(format!(
                "residual add needs {} channels, input has {}",
                self.channels,
                x.shape()[1]
            )));
        }
        let h = self.msgdc.forward(x)?;
        let h = channel_shuffle(&h, self.shuffle_groups)?;
        let h = self.ca.forward(&h)?;
        let h = self.gpc_out.forward(&h)?;
        add(x, &h)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut ps = self.msgdc.params();
        ps.extend(self.ca.params());
        ps.extend(self.gpc_out.params());
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> BuildCtx {
        let mut c = BuildCtx::new(5);
        c.shuffle_groups = 2;
        c
    }

    #[test]
    fn zeroed_inner_path_is_residual_identity() {
        let ctx = ctx();
        let e = Emila::new("e", 4, &ctx).unwrap();
        e.gpc_out.weight.set_data(vec![0.0; e.gpc_out.weight.numel()]).unwrap();
        let x = Tensor::from_vec((0..64).map(|v| v as f64 / 9.0).collect(), &[1, 4, 4, 4], false).unwrap();
        let y = e.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let ctx = ctx();
        let e = Emila::new("e", 4, &ctx).unwrap();
        let x = Tensor::zeros(&[1, 4, 5, 5]);
        let y = e.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_stage_wise_composition() {
        let ctx = ctx();
        let e = Emila::new("e", 4, &ctx).unwrap();
        let x = Tensor::from_vec((0..100).map(|v| ((v * 29 % 13) as f64) / 6.0 - 1.0).collect(), &[1, 4, 5, 5], false)
            .unwrap();
        let y = e.forward(&x).unwrap();
        let h = e.msgdc.forward(&x).unwrap();
        let h = channel_shuffle(&h, 2).unwrap();
        let h = e.ca.forward(&h).unwrap();
        let h = e.gpc_out.forward(&h).unwrap();
        let expect = add(&x, &h).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_config_error() {
        let ctx = ctx();
        let e = Emila::new("e", 4, &ctx).unwrap();
        let x = Tensor::zeros(&[1, 6, 4, 4]);
        assert_eq!(e.forward(&x).unwrap_err().kind, crate::error::ErrorKind::Config);
    }
}
