//! Random projection filters.
//!
//! Two mechanisms:
//!
//! - [`MixedConv2d`]: a convolution whose first `n_random` output-channel
//!   filters are frozen Gaussian draws and the rest stay trainable. With
//!   `n_random = 0` it is exactly a plain convolution.
//! - [`RpfConv`]: a channel-preserving projection convolution whose whole
//!   bank is random (or identity in the degenerate configuration), inserted
//!   ahead of the multi-scale convolution branches.
//!
//! Banks are resampled per phase (attack vs. inference) and are never part of
//! the trainable parameter set.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{init_rng, uniform_fan_in, Param};
use crate::tensor::{concat0, conv2d, numel, ConvSpec, Padding, Tensor};

fn gaussian_bank(rng: &mut ChaCha8Rng, shape: &[usize], sigma: f64) -> Tensor {
    let data: Vec<f64> = (0..numel(shape))
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_vec(data, shape, false).unwrap()
}

struct MixedInner {
    name: String,
    spec: ConvSpec,
    n_random: usize,
    sigma: f64,
    trainable: Param,
    /// Per-phase frozen banks (attack, inference) and the active selector.
    frozen: RefCell<[Option<Tensor>; 2]>,
    active: Cell<usize>,
}

/// Convolution with a frozen-random / trainable filter split.
#[derive(Clone)]
pub struct MixedConv2d {
    inner: Rc<MixedInner>,
}

impl MixedConv2d {
    /// `fraction` of the output filters (rounded down) become frozen random
    /// projection filters; `sigma = None` defaults to `1/sqrt(fan_in)`.
    pub fn new(
        name: &str,
        spec: ConvSpec,
        fraction: f64,
        sigma: Option<f64>,
        init_seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::config(format!(
                "random filter fraction {fraction} outside [0, 1]"
            )));
        }
        let (kh, kw) = spec.kernel;
        let cg_in = spec.channels_in / spec.groups;
        let fan_in = cg_in * kh * kw;
        let n_random = (spec.channels_out as f64 * fraction).floor() as usize;
        let n_train = spec.channels_out - n_random;
        let wname = format!("{name}.weight");
        let mut rng = init_rng(init_seed, &wname);
        let data = uniform_fan_in(&mut rng, n_train * cg_in * kh * kw, fan_in);
        let trainable = Param::new(
            wname,
            Tensor::from_vec(data, &[n_train, cg_in, kh, kw], true)?,
            true,
        );
        let sigma = sigma.unwrap_or(1.0 / (fan_in as f64).sqrt());
        Ok(Self {
            inner: Rc::new(MixedInner {
                name: name.to_string(),
                spec,
                n_random,
                sigma,
                trainable,
                frozen: RefCell::new([None, None]),
                active: Cell::new(1),
            }),
        })
    }

    pub fn name(&self) -> String {
        self.inner.name.clone()
    }

    pub fn spec(&self) -> ConvSpec {
        self.inner.spec
    }

    pub fn n_random(&self) -> usize {
        self.inner.n_random
    }

    pub fn trainable(&self) -> Param {
        self.inner.trainable.clone()
    }

    /// Draw a fresh frozen bank for one phase; a no-op when no filters are
    /// random.
    pub fn resample(&self, phase: usize, rng: &mut ChaCha8Rng) {
        if self.inner.n_random == 0 {
            return;
        }
        let (kh, kw) = self.inner.spec.kernel;
        let cg_in = self.inner.spec.channels_in / self.inner.spec.groups;
        let bank = gaussian_bank(rng, &[self.inner.n_random, cg_in, kh, kw], self.inner.sigma);
        self.inner.frozen.borrow_mut()[phase] = Some(bank);
    }

    pub fn set_phase(&self, phase: usize) {
        self.inner.active.set(phase);
    }

    pub fn frozen_bank(&self) -> Option<Tensor> {
        self.inner.frozen.borrow()[self.inner.active.get()].clone()
    }

    /// Full filter bank: frozen rows first, trainable rows after.
    pub fn weight(&self) -> Result<Tensor> {
        if self.inner.n_random == 0 {
            return Ok(self.inner.trainable.tensor());
        }
        let frozen = self.frozen_bank().ok_or_else(|| {
            Error::state(format!(
                "mixed conv {} used before its random filter bank was sampled",
                self.inner.name
            ))
        })?;
        concat0(&frozen, &self.inner.trainable.tensor())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight()?, &self.inner.spec)
    }

    /// Overwrite the trainable part with an identity mapping (requires a
    /// square channel map and no random filters). Test configuration helper.
    pub fn set_identity(&self) -> Result<()> {
        let spec = self.inner.spec;
        if self.inner.n_random != 0 || spec.channels_in != spec.channels_out {
            return Err(Error::contract("identity configuration needs a square all-trainable conv"));
        }
        let (kh, kw) = spec.kernel;
        let cg_in = spec.channels_in / spec.groups;
        let mut w = vec![0.0; spec.channels_out * cg_in * kh * kw];
        let (ch, cw) = (kh / 2, kw / 2);
        for o in 0..spec.channels_out {
            let local = o % cg_in;
            w[((o * cg_in + local) * kh + ch) * kw + cw] = 1.0;
        }
        self.inner.trainable.set_data(w)
    }

    /// Zero the trainable filters (and forbid random ones). Test helper.
    pub fn set_zero(&self) -> Result<()> {
        if self.inner.n_random != 0 {
            return Err(Error::contract("zero configuration needs an all-trainable conv"));
        }
        self.inner.trainable.set_data(vec![0.0; self.inner.trainable.numel()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpfMode {
    /// Bank fixed to the identity kernel; the projection is transparent.
    Identity,
    /// Bank drawn from `N(0, sigma^2)` on every resample.
    Random,
}

struct RpfInner {
    name: String,
    spec: ConvSpec,
    sigma: f64,
    mode: Cell<RpfMode>,
    bank: RefCell<[Option<Tensor>; 2]>,
    active: Cell<usize>,
}

/// Channel-preserving random projection convolution.
#[derive(Clone)]
pub struct RpfConv {
    inner: Rc<RpfInner>,
}

impl RpfConv {
    pub fn new(name: &str, channels: usize, kernel: usize, sigma: Option<f64>) -> Result<Self> {
        let spec = ConvSpec::new((kernel, kernel), channels, channels).with_padding(Padding::Same);
        spec.validate()?;
        let fan_in = channels * kernel * kernel;
        Ok(Self {
            inner: Rc::new(RpfInner {
                name: name.to_string(),
                spec,
                sigma: sigma.unwrap_or(1.0 / (fan_in as f64).sqrt()),
                mode: Cell::new(RpfMode::Identity),
                bank: RefCell::new([None, None]),
                active: Cell::new(1),
            }),
        })
    }

    pub fn name(&self) -> String {
        self.inner.name.clone()
    }

    pub fn set_mode(&self, mode: RpfMode) {
        self.inner.mode.set(mode);
    }

    pub fn mode(&self) -> RpfMode {
        self.inner.mode.get()
    }

    pub fn resample(&self, phase: usize, rng: &mut ChaCha8Rng) {
        let spec = self.inner.spec;
        let (kh, kw) = spec.kernel;
        let bank = gaussian_bank(rng, &[spec.channels_out, spec.channels_in, kh, kw], self.inner.sigma);
        self.inner.bank.borrow_mut()[phase] = Some(bank);
    }

    pub fn set_phase(&self, phase: usize) {
        self.inner.active.set(phase);
    }

    pub fn bank(&self) -> Option<Tensor> {
        self.inner.bank.borrow()[self.inner.active.get()].clone()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self.inner.mode.get() {
            // The identity kernel reproduces the input exactly; skip the
            // convolution arithmetic.
            RpfMode::Identity => Ok(x.clone()),
            RpfMode::Random => {
                let bank = self.bank().ok_or_else(|| {
                    Error::state(format!(
                        "projection {} used before its filter bank was sampled",
                        self.inner.name
                    ))
                })?;
                conv2d(x, &bank, &self.inner.spec)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn zero_fraction_equals_plain_conv() {
        let spec = ConvSpec::new((3, 3), 2, 4);
        let mixed = MixedConv2d::new("layer", spec, 0.0, None, 11).unwrap();
        let plain = crate::nn::Conv2d::new("layer", spec, 11).unwrap();
        assert_eq!(mixed.weight().unwrap().data(), plain.weight.tensor().data());
        let x = Tensor::from_vec((0..32).map(|v| v as f64 / 9.0).collect(), &[1, 2, 4, 4], false).unwrap();
        assert_eq!(
            mixed.forward(&x).unwrap().data(),
            plain.forward(&x).unwrap().data()
        );
    }

    #[test]
    fn fixed_seed_reproduces_bank() {
        let spec = ConvSpec::new((3, 3), 2, 4);
        let mixed = MixedConv2d::new("layer", spec, 0.5, Some(0.2), 11).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        mixed.resample(1, &mut r1);
        let a = mixed.frozen_bank().unwrap().data().to_vec();
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        mixed.resample(1, &mut r2);
        assert_eq!(a, mixed.frozen_bank().unwrap().data());
    }

    #[test]
    fn unsampled_bank_is_state_error() {
        let spec = ConvSpec::new((3, 3), 2, 4);
        let mixed = MixedConv2d::new("layer", spec, 0.5, None, 11).unwrap();
        let e = mixed.weight().unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::State);
    }

    #[test]
    fn identity_projection_is_transparent() {
        let p = RpfConv::new("proj", 3, 3, None).unwrap();
        let x = Tensor::from_vec((0..27).map(|v| v as f64).collect(), &[1, 3, 3, 3], false).unwrap();
        assert_eq!(p.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn sampled_moments_match_target() {
        // 1e5 draws: mean within 3*sigma/sqrt(n), variance within 5%.
        let sigma = 0.37;
        let p = RpfConv::new("proj", 10, 10, Some(sigma)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        p.resample(1, &mut rng);
        let bank = p.bank().unwrap();
        let d = bank.data();
        assert_eq!(d.len(), 10 * 10 * 10 * 10);
        let n = d.len() as f64;
        let mean: f64 = d.iter().sum::<f64>() / n;
        let var: f64 = d.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        assert!((var - sigma * sigma).abs() < 0.05 * sigma * sigma, "var {var}");
    }

    #[test]
    fn mixed_split_puts_frozen_rows_first() {
        let spec = ConvSpec::new((1, 1), 1, 4);
        let mixed = MixedConv2d::new("layer", spec, 0.5, Some(1.0), 11).unwrap();
        assert_eq!(mixed.n_random(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        mixed.resample(1, &mut rng);
        let w = mixed.weight().unwrap();
        assert_eq!(w.shape(), &[4, 1, 1, 1]);
        let frozen = mixed.frozen_bank().unwrap();
        assert_eq!(&w.data()[..2], frozen.data());
        assert_eq!(&w.data()[2..], mixed.trainable().tensor().data());
    }
}
