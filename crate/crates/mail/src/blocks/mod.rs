//! Attention blocks: multi-scale grouped/depthwise convolution, channel
//! attention, residual attention, and the frequency/spatial fusion module.

mod ca;
mod emcam;
mod emila;
mod emsca;
mod erla;
mod mfifa;
mod msgdc;

pub use ca::ChannelAttention;
pub use emcam::{Emcam, EmcamOptions, FusionMode};
pub use emila::Emila;
pub use emsca::Emsca;
pub use erla::Erla;
pub use mfifa::{mfifa_decompose, FreqComponents, Mfifa};
pub use msgdc::Msgdc;

use crate::error::{Error, Result};
use crate::robust::Registry;

/// Robust construction options: which stochastic elements the blocks embed.
#[derive(Debug, Clone, Copy)]
pub struct RobustBuild {
    /// Fraction of each multi-scale conv's filters replaced by frozen random
    /// projection filters.
    pub rpf_fraction: f64,
    /// Insert a random projection convolution ahead of the multi-scale
    /// branches.
    pub projection: bool,
    pub projection_kernel: usize,
    /// Std of random filters; `None` defaults to `1/sqrt(fan_in)` per layer.
    pub sigma: Option<f64>,
    /// Std of the attention noise draw around its unit mean.
    pub noise_sigma: f64,
}

impl Default for RobustBuild {
    fn default() -> Self {
        Self {
            rpf_fraction: 0.5,
            projection: true,
            projection_kernel: 3,
            sigma: None,
            noise_sigma: 0.25,
        }
    }
}

/// Shared construction context for all blocks of one model.
pub struct BuildCtx {
    pub init_seed: u64,
    /// Groups of every 1x1 group-pointwise convolution.
    pub gpc_groups: usize,
    /// Channel shuffle groups inside the multi-scale attention module.
    pub shuffle_groups: usize,
    /// Channel attention hidden-width divisor.
    pub ca_reduction: usize,
    pub robust: Option<RobustBuild>,
    pub registry: Registry,
}

impl BuildCtx {
    pub fn new(init_seed: u64) -> Self {
        Self {
            init_seed,
            gpc_groups: 1,
            shuffle_groups: 4,
            ca_reduction: 4,
            robust: None,
            registry: Registry::default(),
        }
    }

    pub fn check_channels(&self, name: &str, channels: usize) -> Result<()> {
        if channels % self.gpc_groups != 0 {
            return Err(Error::config(format!(
                "{name}: pointwise groups {} must divide channels {}",
                self.gpc_groups, channels
            )));
        }
        if channels % self.shuffle_groups != 0 {
            return Err(Error::config(format!(
                "{name}: shuffle groups {} must divide channels {}",
                self.shuffle_groups, channels
            )));
        }
        Ok(())
    }
}
