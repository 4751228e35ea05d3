//! Layers: named parameters, convolution, fully connected, batch norm.
//!
//! A [`Param`] owns a leaf tensor behind a `RefCell`; the optimizer replaces
//! the leaf after each step, so graphs from previous passes never alias the
//! updated values. Initialization is keyed by parameter name, which keeps
//! shared layers bit-identical across model variants that add or remove other
//! parameters.

use std::cell::RefCell;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::mix;
use crate::tensor::{
    batch_norm_eval, batch_norm_train, conv2d, linear, numel, ConvSpec, Padding, Tensor,
};

/// Named, optionally trainable, persistent tensor.
#[derive(Clone)]
pub struct Param {
    inner: Rc<ParamInner>,
}

struct ParamInner {
    name: String,
    trainable: bool,
    value: RefCell<Tensor>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        Self {
            inner: Rc::new(ParamInner { name: name.into(), trainable, value: RefCell::new(value) }),
        }
    }

    pub fn name(&self) -> String {
        self.inner.name.clone()
    }

    pub fn trainable(&self) -> bool {
        self.inner.trainable
    }

    /// Handle to the current leaf tensor.
    pub fn tensor(&self) -> Tensor {
        self.inner.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.value.borrow().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.inner.value.borrow().numel()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.value.borrow().grad()
    }

    pub fn zero_grad(&self) {
        self.inner.value.borrow().zero_grad();
    }

    /// Toggle gradient tracking by swapping in an equivalent leaf. Frozen
    /// parameters never track.
    pub fn set_tracking(&self, track: bool) {
        let want = track && self.trainable();
        let current = self.inner.value.borrow().clone();
        if current.requires_grad() == want {
            return;
        }
        let t = Tensor::from_vec(current.data().to_vec(), current.shape(), want).unwrap();
        *self.inner.value.borrow_mut() = t;
    }

    /// Replace the stored values with a fresh leaf (same shape).
    pub fn set_data(&self, data: Vec<f64>) -> Result<()> {
        let shape = self.shape();
        if data.len() != numel(&shape) {
            return Err(Error::dimension(format!(
                "parameter {} expects {} values, got {}",
                self.name(),
                numel(&shape),
                data.len()
            )));
        }
        let t = Tensor::from_vec(data, &shape, self.trainable())?;
        *self.inner.value.borrow_mut() = t;
        Ok(())
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("name", &self.inner.name)
            .field("shape", &self.shape())
            .field("trainable", &self.inner.trainable)
            .finish()
    }
}

/// Deterministic per-name RNG so initialization does not depend on
/// construction order or on unrelated parameters existing.
pub fn init_rng(init_seed: u64, name: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in name.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(mix(init_seed ^ h))
}

/// Fan-in-scaled uniform draw in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Convolution layer owning its weight parameter (no bias; normalization
/// follows every convolution in this architecture).
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Param,
}

impl Conv2d {
    pub fn new(name: &str, spec: ConvSpec, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        let (kh, kw) = spec.kernel;
        let cg_in = spec.channels_in / spec.groups;
        let shape = [spec.channels_out, cg_in, kh, kw];
        let fan_in = cg_in * kh * kw;
        let wname = format!("{name}.weight");
        let mut rng = init_rng(init_seed, &wname);
        let data = uniform_fan_in(&mut rng, numel(&shape), fan_in);
        let weight = Param::new(wname, Tensor::from_vec(data, &shape, true)?, true);
        Ok(Self { spec, weight })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight.tensor(), &self.spec)
    }

    pub fn params(&self) -> Vec<Param> {
        vec![self.weight.clone()]
    }
}

/// Fully connected layer with bias.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, init_seed: u64) -> Result<Self> {
        let wname = format!("{name}.weight");
        let mut rng = init_rng(init_seed, &wname);
        let wdata = uniform_fan_in(&mut rng, out_features * in_features, in_features);
        let weight = Param::new(wname, Tensor::from_vec(wdata, &[out_features, in_features], true)?, true);
        let bias = Param::new(
            format!("{name}.bias"),
            Tensor::from_vec(vec![0.0; out_features], &[out_features], true)?,
            true,
        );
        Ok(Self { weight, bias })
    }

    /// Identity-configured layer (square, unit diagonal, zero bias), used by
    /// tests that need the fully connected stage to be transparent.
    pub fn identity(name: &str, features: usize) -> Result<Self> {
        let mut w = vec![0.0; features * features];
        for i in 0..features {
            w[i * features + i] = 1.0;
        }
        Ok(Self {
            weight: Param::new(format!("{name}.weight"), Tensor::from_vec(w, &[features, features], true)?, true),
            bias: Param::new(
                format!("{name}.bias"),
                Tensor::from_vec(vec![0.0; features], &[features], true)?,
                true,
            ),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weight.tensor(), Some(&self.bias.tensor()))
    }

    pub fn params(&self) -> Vec<Param> {
        vec![self.weight.clone(), self.bias.clone()]
    }
}

/// Batch normalization with running statistics.
///
/// Running statistics start uninitialized; evaluation before any training
/// batch has been folded in is a state error.
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: RefCell<Vec<f64>>,
    pub running_var: RefCell<Vec<f64>>,
    /// Number of batches folded into the running statistics.
    pub running_count: RefCell<u64>,
    pub momentum: f64,
    /// When false, training forwards use batch statistics without folding
    /// them into the running estimates (attack generation).
    track_stats: std::cell::Cell<bool>,
    name: String,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: Param::new(
                format!("{name}.gamma"),
                Tensor::from_vec(vec![1.0; channels], &[channels], true)?,
                true,
            ),
            beta: Param::new(
                format!("{name}.beta"),
                Tensor::from_vec(vec![0.0; channels], &[channels], true)?,
                true,
            ),
            running_mean: RefCell::new(vec![0.0; channels]),
            running_var: RefCell::new(vec![1.0; channels]),
            running_count: RefCell::new(0),
            momentum: 0.1,
            track_stats: std::cell::Cell::new(true),
            name: name.to_string(),
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => {
                let (y, mean, var) = batch_norm_train(x, &self.gamma.tensor(), &self.beta.tensor())?;
                if self.track_stats.get() {
                    let mut rm = self.running_mean.borrow_mut();
                    let mut rv = self.running_var.borrow_mut();
                    let mut rc = self.running_count.borrow_mut();
                    if *rc == 0 {
                        rm.copy_from_slice(&mean);
                        rv.copy_from_slice(&var);
                    } else {
                        for (r, &m) in rm.iter_mut().zip(&mean) {
                            *r = (1.0 - self.momentum) * *r + self.momentum * m;
                        }
                        for (r, &v) in rv.iter_mut().zip(&var) {
                            *r = (1.0 - self.momentum) * *r + self.momentum * v;
                        }
                    }
                    *rc += 1;
                }
                Ok(y)
            }
            Mode::Eval => {
                if *self.running_count.borrow() == 0 {
                    return Err(Error::state(format!(
                        "batch norm {} evaluated before any training batch initialized its statistics",
                        self.name
                    )));
                }
                batch_norm_eval(
                    x,
                    &self.gamma.tensor(),
                    &self.beta.tensor(),
                    &self.running_mean.borrow(),
                    &self.running_var.borrow(),
                )
            }
        }
    }

    pub fn set_stat_tracking(&self, track: bool) {
        self.track_stats.set(track);
    }

    pub fn params(&self) -> Vec<Param> {
        vec![self.gamma.clone(), self.beta.clone()]
    }

    /// Running statistics serialized as named buffers.
    pub fn buffers(&self) -> Vec<(String, Vec<f64>, Vec<usize>)> {
        let c = self.running_mean.borrow().len();
        vec![
            (format!("{}.running_mean", self.name), self.running_mean.borrow().clone(), vec![c]),
            (format!("{}.running_var", self.name), self.running_var.borrow().clone(), vec![c]),
            (format!("{}.running_count", self.name), vec![*self.running_count.borrow() as f64], vec![1]),
        ]
    }

    pub fn load_buffer(&self, suffix: &str, data: &[f64]) -> Result<()> {
        match suffix {
            "running_mean" => self.running_mean.borrow_mut().copy_from_slice(data),
            "running_var" => self.running_var.borrow_mut().copy_from_slice(data),
            "running_count" => *self.running_count.borrow_mut() = data[0] as u64,
            _ => return Err(Error::format(format!("unknown batch norm buffer {suffix}"))),
        }
        Ok(())
    }
}

/// A convolution spec for a 1x1 grouped pointwise layer.
pub fn pointwise_spec(channels_in: usize, channels_out: usize, groups: usize) -> ConvSpec {
    ConvSpec::new((1, 1), channels_in, channels_out)
        .with_groups(groups)
        .with_padding(Padding::Explicit(0))
}

/// A convolution spec for a depthwise layer at kernel size `k`.
pub fn depthwise_spec(channels: usize, k: usize) -> ConvSpec {
    ConvSpec::new((k, k), channels, channels).with_groups(channels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sum_all, GlobalPoolKind};

    #[test]
    fn param_set_data_checks_length() {
        let p = Param::new("p", Tensor::zeros(&[2, 2]), true);
        assert!(p.set_data(vec![0.0; 3]).is_err());
        assert!(p.set_data(vec![1.0; 4]).is_ok());
        assert_eq!(p.tensor().data(), &[1.0; 4]);
    }

    #[test]
    fn init_is_name_keyed_not_order_keyed() {
        let a = Conv2d::new("net.c1", ConvSpec::new((3, 3), 2, 4), 9).unwrap();
        let _other = Conv2d::new("net.cx", ConvSpec::new((3, 3), 2, 4), 9).unwrap();
        let b = Conv2d::new("net.c1", ConvSpec::new((3, 3), 2, 4), 9).unwrap();
        assert_eq!(a.weight.tensor().data(), b.weight.tensor().data());
    }

    #[test]
    fn batch_norm_eval_before_train_is_state_error() {
        let bn = BatchNorm2d::new("bn", 2).unwrap();
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let e = bn.forward(&x, Mode::Eval).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::State);
    }

    #[test]
    fn batch_norm_train_then_eval_runs() {
        let bn = BatchNorm2d::new("bn", 1).unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2], false).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn grads_reach_layer_params() {
        let conv = Conv2d::new("c", ConvSpec::new((3, 3), 1, 2), 3).unwrap();
        let x = Tensor::from_vec((0..16).map(|v| v as f64 / 7.0).collect(), &[1, 1, 4, 4], false).unwrap();
        let y = conv.forward(&x).unwrap();
        let pooled = crate::tensor::global_pool(&y, GlobalPoolKind::Avg).unwrap();
        sum_all(&pooled).backward().unwrap();
        assert!(conv.weight.grad().is_some());
    }
}
