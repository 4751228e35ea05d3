//! Modulated attention noise.
//!
//! Each injection site owns learnable channel-wise noise weights `delta` and
//! composes them with a random draw `eta_l` into the multiplier
//! `eta_I = eta_l * (delta + eta_l * delta)`, broadcast channel-wise at the
//! block's modulation point. `delta` initializes to 0.5 so the degenerate
//! draw `eta_l = 1` reproduces the clean block exactly (`eta_I = 1`).

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::{add, mul, Tensor};

/// Composed noise multiplier: `eta_I = eta_l * (delta + eta_l * delta)`.
///
/// Differentiable with respect to `delta`; `eta_l` is treated as a constant
/// draw.
pub fn man_noise(eta_l: &Tensor, delta: &Tensor) -> Result<Tensor> {
    mul(eta_l, &add(delta, &mul(eta_l, delta)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Degenerate draw `eta_l = 1`; with freshly initialized weights this
    /// makes the site transparent, and it is the deterministic-inference
    /// setting.
    Ones,
    /// Fresh Gaussian draw on every forward pass.
    Fresh,
    /// Reuse the stored draw (for gradient checks).
    Frozen,
}

struct SiteInner {
    delta: Param,
    channels: usize,
    /// Standard deviation of `eta_l` around its unit mean.
    sigma: Cell<f64>,
    mode: Cell<NoiseMode>,
    rng: RefCell<Option<Rc<RefCell<ChaCha8Rng>>>>,
    frozen: RefCell<Option<Vec<f64>>>,
}

/// One noise-injection site (channel attention, frequency terms, spatial
/// terms, or the fused attention map).
#[derive(Clone)]
pub struct NoiseSite {
    inner: Rc<SiteInner>,
}

impl NoiseSite {
    pub fn new(name: &str, channels: usize, sigma: f64) -> Self {
        let delta = Param::new(
            format!("{name}.delta"),
            Tensor::from_vec(vec![0.5; channels], &[channels], true).unwrap(),
            true,
        );
        Self {
            inner: Rc::new(SiteInner {
                delta,
                channels,
                sigma: Cell::new(sigma),
                mode: Cell::new(NoiseMode::Ones),
                rng: RefCell::new(None),
                frozen: RefCell::new(None),
            }),
        }
    }

    pub fn delta(&self) -> Param {
        self.inner.delta.clone()
    }

    pub fn channels(&self) -> usize {
        self.inner.channels
    }

    pub fn set_mode(&self, mode: NoiseMode) {
        self.inner.mode.set(mode);
    }

    pub fn mode(&self) -> NoiseMode {
        self.inner.mode.get()
    }

    pub fn set_sigma(&self, sigma: f64) {
        self.inner.sigma.set(sigma);
    }

    pub fn attach_rng(&self, rng: Rc<RefCell<ChaCha8Rng>>) {
        *self.inner.rng.borrow_mut() = Some(rng);
    }

    fn draw(&self) -> Result<Vec<f64>> {
        let slot = self.inner.rng.borrow();
        let rng = slot.as_ref().ok_or_else(|| {
            Error::state(format!("noise site {} has no RNG attached", self.inner.delta.name()))
        })?;
        let mut rng = rng.borrow_mut();
        let sigma = self.inner.sigma.get();
        Ok((0..self.inner.channels)
            .map(|_| 1.0 + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }

    /// Draw once and reuse that draw until the mode changes.
    pub fn freeze_draw(&self) -> Result<()> {
        let d = self.draw()?;
        *self.inner.frozen.borrow_mut() = Some(d);
        self.set_mode(NoiseMode::Frozen);
        Ok(())
    }

    /// The `eta_I` multiplier for the current forward pass, shape `[C]`.
    pub fn eta(&self) -> Result<Tensor> {
        let eta_l = match self.inner.mode.get() {
            NoiseMode::Ones => vec![1.0; self.inner.channels],
            NoiseMode::Fresh => self.draw()?,
            NoiseMode::Frozen => self
                .inner
                .frozen
                .borrow()
                .clone()
                .ok_or_else(|| Error::state("frozen noise requested before any draw"))?,
        };
        let eta_l = Tensor::from_vec(eta_l, &[self.inner.channels], false)?;
        man_noise(&eta_l, &self.inner.delta.tensor())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn zero_delta_gives_zero_noise() {
        let eta_l = Tensor::from_vec(vec![0.3, -1.2, 2.0], &[3], false).unwrap();
        let delta = Tensor::zeros(&[3]);
        let eta = man_noise(&eta_l, &delta).unwrap();
        assert!(eta.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_draw_gives_twice_delta() {
        let eta_l = Tensor::ones(&[3]);
        let delta = Tensor::from_vec(vec![0.1, 0.5, -0.4], &[3], false).unwrap();
        let eta = man_noise(&eta_l, &delta).unwrap();
        assert_eq!(eta.data(), &[0.2, 1.0, -0.8]);
    }

    #[test]
    fn matches_scalar_evaluation() {
        let el = [0.7, -0.3, 1.9, 0.0];
        let dl = [0.25, 1.5, -0.75, 2.0];
        let eta = man_noise(
            &Tensor::from_vec(el.to_vec(), &[4], false).unwrap(),
            &Tensor::from_vec(dl.to_vec(), &[4], false).unwrap(),
        )
        .unwrap();
        for i in 0..4 {
            let expect = el[i] * (dl[i] + el[i] * dl[i]);
            assert!((eta.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn default_site_is_transparent() {
        let site = NoiseSite::new("s", 4, 0.25);
        let eta = site.eta().unwrap();
        assert_eq!(eta.data(), &[1.0; 4]);
    }

    #[test]
    fn fresh_mode_needs_rng() {
        let site = NoiseSite::new("s", 2, 0.25);
        site.set_mode(NoiseMode::Fresh);
        assert!(site.eta().is_err());
        site.attach_rng(Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(1))));
        assert!(site.eta().is_ok());
    }

    #[test]
    fn frozen_mode_repeats_draw() {
        let site = NoiseSite::new("s", 8, 0.25);
        site.attach_rng(Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(1))));
        site.freeze_draw().unwrap();
        let a = site.eta().unwrap();
        let b = site.eta().unwrap();
        assert_eq!(a.data(), b.data());
    }
}
