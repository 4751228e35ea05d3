//! Adversarial robustness: random projection filters, modulated attention
//! noise, white-box attacks, and the adversarial training step.

pub mod attack;
pub mod man;
pub mod rpan;
pub mod rpf;
pub mod train;

pub use attack::{
    attack, robust_accuracy_sweep, AttackConfig, AttackFamily, AttackTarget, ModelTarget,
    SweepPoint,
};
pub use man::{man_noise, NoiseMode, NoiseSite};
pub use rpan::{rpan_layer, RpanBundle};
pub use rpf::{MixedConv2d, RpfConv, RpfMode};
pub use train::{adversarial_train_step, StepStats};

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;

use crate::nn::Param;

/// Attack-phase vs. inference-phase stochastic state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Attack,
    Inference,
}

impl Phase {
    pub fn tag(&self) -> u64 {
        match self {
            Phase::Attack => 0,
            Phase::Inference => 1,
        }
    }
}

/// Collected handles to every stochastic element created while building a
/// model, in deterministic construction order.
#[derive(Default)]
pub struct Registry {
    mixed: RefCell<Vec<MixedConv2d>>,
    projections: RefCell<Vec<RpfConv>>,
    sites: RefCell<Vec<NoiseSite>>,
    /// Modulation scalars of robustified attention blocks; together with the
    /// noise weights these form the regularized layer-parameter group.
    rpan_scalars: RefCell<Vec<Param>>,
}

impl Registry {
    pub fn register_mixed(&self, m: &MixedConv2d) {
        self.mixed.borrow_mut().push(m.clone());
    }

    pub fn register_projection(&self, p: &RpfConv) {
        self.projections.borrow_mut().push(p.clone());
    }

    pub fn register_site(&self, s: &NoiseSite) {
        self.sites.borrow_mut().push(s.clone());
    }

    pub fn register_rpan_scalar(&self, p: &Param) {
        self.rpan_scalars.borrow_mut().push(p.clone());
    }

    pub fn mixed(&self) -> Vec<MixedConv2d> {
        self.mixed.borrow().clone()
    }

    pub fn projections(&self) -> Vec<RpfConv> {
        self.projections.borrow().clone()
    }

    pub fn sites(&self) -> Vec<NoiseSite> {
        self.sites.borrow().clone()
    }

    pub fn rpan_scalars(&self) -> Vec<Param> {
        self.rpan_scalars.borrow().clone()
    }

    /// Trainable filters of the mixed layers (the regularized filter group).
    pub fn mixed_trainable(&self) -> Vec<Param> {
        self.mixed.borrow().iter().map(|m| m.trainable()).collect()
    }

    /// Resample every frozen bank of one phase from `rng`, in registration
    /// order.
    pub fn resample_banks(&self, phase: Phase, rng: &mut ChaCha8Rng) {
        let idx = phase.tag() as usize;
        for m in self.mixed.borrow().iter() {
            m.resample(idx, rng);
        }
        for p in self.projections.borrow().iter() {
            p.resample(idx, rng);
        }
    }

    /// Select which phase's banks subsequent forwards read.
    pub fn set_phase(&self, phase: Phase) {
        let idx = phase.tag() as usize;
        for m in self.mixed.borrow().iter() {
            m.set_phase(idx);
        }
        for p in self.projections.borrow().iter() {
            p.set_phase(idx);
        }
    }

    pub fn set_noise_mode(&self, mode: NoiseMode) {
        for s in self.sites.borrow().iter() {
            s.set_mode(mode);
        }
    }

    pub fn has_random_elements(&self) -> bool {
        self.mixed.borrow().iter().any(|m| m.n_random() > 0)
            || !self.projections.borrow().is_empty()
            || !self.sites.borrow().is_empty()
    }
}
