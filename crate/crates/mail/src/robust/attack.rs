//! White-box attacks: FGSM, PGD, BIM and MIM under an L-infinity budget.
//!
//! Every family runs signed-gradient ascent on the multitask loss with
//! per-step projection onto the epsilon-ball and the valid pixel range, so
//! `max |x* - x| <= epsilon` holds exactly. PGD starts from a uniform draw
//! inside the ball, BIM from zero; MIM accumulates L1-normalized gradients
//! in a momentum buffer before taking the sign. FGSM is single-step BIM at
//! step size epsilon.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::net::MailModel;
use crate::robust::Phase;
use crate::tensor::Tensor;
use crate::train::argmax_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    Bim,
    Mim,
}

impl AttackFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackFamily::Fgsm),
            "pgd" => Ok(AttackFamily::Pgd),
            "bim" => Ok(AttackFamily::Bim),
            "mim" => Ok(AttackFamily::Mim),
            other => Err(Error::config(format!("unknown attack family '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::Bim => "bim",
            AttackFamily::Mim => "mim",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub family: AttackFamily,
    /// L-infinity budget on the pixel scale.
    pub epsilon: f64,
    /// Per-iteration step size.
    pub step: f64,
    pub iters: usize,
    pub random_init: bool,
    /// Momentum decay for MIM.
    pub momentum: f64,
    /// Valid input range.
    pub clamp: (f64, f64),
}

impl AttackConfig {
    pub fn new(family: AttackFamily, epsilon: f64, step: f64, iters: usize) -> Self {
        let (iters, step, random_init) = match family {
            AttackFamily::Fgsm => (1, epsilon, false),
            AttackFamily::Pgd => (iters, step, true),
            AttackFamily::Bim => (iters, step, false),
            AttackFamily::Mim => (iters, step, false),
        };
        Self { family, epsilon, step, iters, random_init, momentum: 1.0, clamp: (0.0, 1.0) }
    }

    pub fn pgd(epsilon: f64, step: f64, iters: usize) -> Self {
        Self::new(AttackFamily::Pgd, epsilon, step, iters)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::config("attack epsilon must be non-negative"));
        }
        if self.iters == 0 {
            return Err(Error::config("attack needs at least one iteration"));
        }
        if self.epsilon > 0.0 && self.step <= 0.0 {
            return Err(Error::config("attack step must be positive"));
        }
        Ok(())
    }
}

/// Anything the attacks can differentiate through: a forward returning the
/// multitask loss plus per-task logits, built on input leaves.
pub trait AttackTarget {
    fn modalities(&self) -> usize;
    fn forward_loss(&self, xs: &[Tensor], labels: &[Vec<usize>]) -> Result<(Tensor, Vec<Tensor>)>;
}

/// A model bound to a batch-norm mode for attack generation.
pub struct ModelTarget<'a> {
    pub model: &'a MailModel,
    pub mode: Mode,
}

impl AttackTarget for ModelTarget<'_> {
    fn modalities(&self) -> usize {
        self.model.config.modalities
    }

    fn forward_loss(&self, xs: &[Tensor], labels: &[Vec<usize>]) -> Result<(Tensor, Vec<Tensor>)> {
        let logits = self.model.forward(xs, self.mode)?;
        let loss = self.model.loss(&logits, labels)?;
        Ok((loss, logits))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn adv_inputs(
    xs: &[Tensor],
    deltas: &[Vec<f64>],
    clamp: (f64, f64),
    requires_grad: bool,
) -> Result<Vec<Tensor>> {
    xs.iter()
        .zip(deltas)
        .map(|(x, d)| {
            let data: Vec<f64> = x
                .data()
                .iter()
                .zip(d)
                .map(|(&v, &dv)| (v + dv).clamp(clamp.0, clamp.1))
                .collect();
            Tensor::from_vec(data, x.shape(), requires_grad)
        })
        .collect()
}

/// Shared signed-gradient step state.
struct StepState {
    deltas: Vec<Vec<f64>>,
    momentum: Vec<Vec<f64>>,
    per_sample: Vec<usize>,
    batch: usize,
}

impl StepState {
    fn init(xs: &[Tensor], config: &AttackConfig, rng: &mut ChaCha8Rng) -> Self {
        let batch = xs[0].shape()[0];
        let eps = config.epsilon;
        let deltas = xs
            .iter()
            .map(|x| {
                if config.random_init && eps > 0.0 {
                    (0..x.numel()).map(|_| rng.gen_range(-eps..=eps)).collect()
                } else {
                    vec![0.0; x.numel()]
                }
            })
            .collect();
        Self {
            deltas,
            momentum: xs.iter().map(|x| vec![0.0; x.numel()]).collect(),
            per_sample: xs.iter().map(|x| x.numel() / batch).collect(),
            batch,
        }
    }

    /// One ascent step from the given input gradients, with projection onto
    /// the epsilon ball and pixel range.
    fn apply(&mut self, xs: &[Tensor], grads: &[Vec<f64>], config: &AttackConfig) {
        let eps = config.epsilon;
        let use_momentum = config.family == AttackFamily::Mim;
        if use_momentum {
            for (m, g) in grads.iter().enumerate() {
                let per = self.per_sample[m];
                for b in 0..self.batch {
                    let seg = &g[b * per..(b + 1) * per];
                    let l1: f64 = seg.iter().map(|v| v.abs()).sum();
                    let scale = if l1 > 0.0 { 1.0 / l1 } else { 0.0 };
                    let buf = &mut self.momentum[m][b * per..(b + 1) * per];
                    for (bv, &gv) in buf.iter_mut().zip(seg) {
                        *bv = config.momentum * *bv + gv * scale;
                    }
                }
            }
        }
        for m in 0..grads.len() {
            let dir: &[f64] = if use_momentum { &self.momentum[m] } else { &grads[m] };
            let x = xs[m].data();
            for (i, d) in self.deltas[m].iter_mut().enumerate() {
                *d = (*d + config.step * sign(dir[i])).clamp(-eps, eps);
                // Keep x + delta inside the pixel range as well.
                *d = (x[i] + *d).clamp(config.clamp.0, config.clamp.1) - x[i];
            }
        }
    }
}

fn input_gradients(target: &dyn AttackTarget, adv: &[Tensor], labels: &[Vec<usize>], config: &AttackConfig) -> Result<Vec<Vec<f64>>> {
    let (loss, _) = target.forward_loss(adv, labels)?;
    loss.backward()?;
    let grads: Vec<Vec<f64>> = adv
        .iter()
        .map(|a| a.grad().unwrap_or_else(|| vec![0.0; a.numel()]))
        .collect();
    for g in &grads {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite input gradient during {} attack (epsilon {}, step {}, iters {})",
                config.family.name(),
                config.epsilon,
                config.step,
                config.iters
            )));
        }
    }
    Ok(grads)
}

/// Generate adversarial examples for a batch of multimodal inputs.
///
/// Returns one perturbed tensor per modality; each satisfies the epsilon
/// ball and range constraints exactly.
pub fn attack(
    target: &dyn AttackTarget,
    xs: &[Tensor],
    labels: &[Vec<usize>],
    config: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tensor>> {
    config.validate()?;
    if xs.len() != target.modalities() {
        return Err(Error::contract(format!(
            "attack target expects {} modalities, got {}",
            target.modalities(),
            xs.len()
        )));
    }
    let mut state = StepState::init(xs, config, rng);
    if config.epsilon == 0.0 {
        return adv_inputs(xs, &state.deltas, config.clamp, false);
    }
    for _ in 0..config.iters {
        let adv = adv_inputs(xs, &state.deltas, config.clamp, true)?;
        let grads = input_gradients(target, &adv, labels, config)?;
        state.apply(xs, &grads, config);
    }
    adv_inputs(xs, &state.deltas, config.clamp, false)
}

/// One row of an iteration sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub iters: usize,
    pub correct: usize,
    pub total: usize,
}

impl SweepPoint {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Robust accuracy under a budgeted attack, evaluated cumulatively: a sample
/// counts as robust at `k` iterations only if the model classified it
/// correctly at every checked iterate up to `k` (including the starting
/// point). Accuracy is therefore non-increasing in the iteration budget by
/// construction, and a zero-epsilon sweep returns clean accuracy exactly.
///
/// For robust models the attack steps run against freshly sampled
/// attack-phase banks while evaluations use the inference-phase banks.
pub fn robust_accuracy_sweep(
    model: &MailModel,
    xs: &[Tensor],
    labels: &[usize],
    config: &AttackConfig,
    iters_list: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SweepPoint>> {
    config.validate()?;
    let mut iters_sorted: Vec<usize> = iters_list.to_vec();
    iters_sorted.sort_unstable();
    let max_iters = *iters_sorted.last().ok_or_else(|| Error::contract("empty iteration list"))?;
    let batch = xs[0].shape()[0];
    let task_labels = vec![labels.to_vec()];

    if model.is_robust() {
        model.resample(Phase::Attack);
        model.resample(Phase::Inference);
    }

    let mut state = StepState::init(xs, config, rng);
    let mut alive: Vec<bool> = vec![true; batch];
    let classes = model.config.tasks[0].classes;

    let eval_point = |state: &StepState, alive: &mut Vec<bool>| -> Result<()> {
        model.set_phase(Phase::Inference);
        let adv = adv_inputs(xs, &state.deltas, config.clamp, false)?;
        let logits = model.forward(&adv, Mode::Eval)?;
        let preds = argmax_rows(logits[0].data(), classes);
        for b in 0..batch {
            if preds[b] != labels[b] {
                alive[b] = false;
            }
        }
        Ok(())
    };

    // Starting point (clean input, or the random initialization).
    eval_point(&state, &mut alive)?;
    let mut results = Vec::new();
    if iters_sorted.first() == Some(&0) {
        results.push(SweepPoint { iters: 0, correct: alive.iter().filter(|&&a| a).count(), total: batch });
    }

    for it in 1..=max_iters {
        if config.epsilon > 0.0 {
            model.set_phase(Phase::Attack);
            let adv = adv_inputs(xs, &state.deltas, config.clamp, true)?;
            let target = ModelTarget { model, mode: Mode::Eval };
            let grads = input_gradients(&target, &adv, &task_labels, config)?;
            state.apply(xs, &grads, config);
            eval_point(&state, &mut alive)?;
        }
        if iters_sorted.contains(&it) {
            results.push(SweepPoint { iters: it, correct: alive.iter().filter(|&&a| a).count(), total: batch });
        }
    }
    Ok(results)
}
