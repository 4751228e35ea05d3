//! The composite stochastic layer: random projection filters around a
//! noise-injected channel attention feeding the noise-injected fusion
//! attention, which recalibrates the layer input.
//!
//! `tau(x) = x * sigma(eta * (theta_f * freq(v) + theta_s * spatial(v))) * theta_m`
//! with `v = R * ca_noisy(R * x)` and `R` the projection bank of the active
//! phase. With identity projections and unit noise the layer reduces to the
//! clean fusion recalibration of `x` computed from attention-refined
//! features.

use std::cell::RefCell;
use std::rc::Rc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BuildCtx, ChannelAttention, Emcam, EmcamOptions, FusionMode};
use crate::error::Result;
use crate::nn::Param;
use crate::robust::{NoiseMode, Phase, Registry, RpfConv, RpfMode};
use crate::tensor::{mul, reshape, Tensor};

pub struct RpanBundle {
    pub rpf: RpfConv,
    pub ca: ChannelAttention,
    pub fusion: Emcam,
    pub registry: Registry,
    pub channels: usize,
    man_rng: Rc<RefCell<ChaCha8Rng>>,
}

impl RpanBundle {
    /// Builds a standalone layer and takes over the context's registry so
    /// resampling stays local to the bundle.
    pub fn new(name: &str, channels: usize, ctx: &mut BuildCtx) -> Result<Self> {
        let robust = ctx.robust.unwrap_or_default();
        let rpf = RpfConv::new(
            &format!("{name}.rpf"),
            channels,
            robust.projection_kernel,
            robust.sigma,
        )?;
        ctx.registry.register_projection(&rpf);
        let ca = ChannelAttention::new(&format!("{name}.ca"), channels, ctx)?;
        let fusion = Emcam::new(
            &format!("{name}.fusion"),
            channels,
            1,
            &EmcamOptions { use_dct: false, with_mfifa: true, with_emsca: true, mode: FusionMode::Parallel },
            ctx,
        )?;
        let man_rng = Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(ctx.init_seed ^ 0x5eed)));
        let registry = std::mem::take(&mut ctx.registry);
        for site in registry.sites() {
            site.attach_rng(man_rng.clone());
        }
        Ok(Self { rpf, ca, fusion, registry, channels, man_rng })
    }

    /// Redraw the banks and noise stream of one phase and make it active.
    pub fn resample(&self, phase: Phase, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::mix(seed ^ phase.tag()));
        self.registry.resample_banks(phase, &mut rng);
        self.registry.set_phase(phase);
        self.rpf.set_mode(RpfMode::Random);
        *self.man_rng.borrow_mut() =
            ChaCha8Rng::seed_from_u64(crate::rng::mix(seed ^ (phase.tag().wrapping_add(17))));
        self.registry.set_noise_mode(NoiseMode::Fresh);
    }

    pub fn set_noise_mode(&self, mode: NoiseMode) {
        self.registry.set_noise_mode(mode);
    }

    /// Degenerate configuration: identity projections and unit noise.
    pub fn set_degenerate(&self) {
        self.rpf.set_mode(RpfMode::Identity);
        self.registry.set_noise_mode(NoiseMode::Ones);
    }

    /// Freeze every noise draw for gradient checking.
    pub fn freeze_noise(&self) -> Result<()> {
        for site in self.registry.sites() {
            site.freeze_draw()?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<Param> {
        let mut ps = self.ca.params();
        ps.extend(self.fusion.params());
        ps
    }

    /// `tau(x)`: enhanced (noisy) recalibration of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let u = self.rpf.forward(x)?;
        let c = self.ca.forward(&u)?;
        let v = self.rpf.forward(&c)?;
        let map = self.fusion.attention_map(std::slice::from_ref(&v))?;
        let tm = reshape(&self.fusion.theta_m[0].tensor(), &[1, self.channels, 1, 1])?;
        mul(&mul(x, &map)?, &tm)
    }
}

/// Convenience wrapper matching the operation-style interface.
pub fn rpan_layer(bundle: &RpanBundle, x: &Tensor) -> Result<Tensor> {
    bundle.forward(x)
}
