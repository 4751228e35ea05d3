//! Adversarial training: generate attack-phase adversarial examples, then
//! descend the inference-phase loss plus the weight-decay term on the
//! trainable mixed filters and the noise-layer parameter group.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::net::MailModel;
use crate::nn::{Mode, Param};
use crate::robust::attack::{attack, AttackConfig, ModelTarget};
use crate::robust::Phase;
use crate::tensor::{add, mul, scale_const, sqrt, sum_all, Tensor};
use crate::train::Sgd;

#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub loss: f64,
    pub regularizer: f64,
}

/// L2 norm of a parameter group, as a scalar tensor on the tape.
fn group_l2(params: &[Param]) -> Result<Option<Tensor>> {
    let mut acc: Option<Tensor> = None;
    for p in params {
        let t = p.tensor();
        let sq = sum_all(&mul(&t, &t)?);
        acc = Some(match acc {
            Some(prev) => add(&prev, &sq)?,
            None => sq,
        });
    }
    Ok(acc.map(|s| sqrt(&s)))
}

/// One adversarial training step.
///
/// 1. Resample attack-phase filter banks and noise, craft adversarial
///    examples against that instantiation (parameter gradients disabled,
///    batch statistics frozen).
/// 2. Resample inference-phase banks and noise.
/// 3. Descend the multitask loss on the adversarial batch plus
///    `weight_decay * (|trainable mixed filters| + |noise-layer params|)`.
///
/// Frozen filters receive no gradients and are untouched by the step.
pub fn adversarial_train_step(
    model: &MailModel,
    xs: &[Tensor],
    labels: &[Vec<usize>],
    attack_cfg: &AttackConfig,
    opt: &mut Sgd,
    rng: &mut ChaCha8Rng,
) -> Result<StepStats> {
    // Attack phase.
    if model.is_robust() {
        model.resample(Phase::Attack);
    }
    model.set_param_tracking(false);
    model.set_stat_tracking(false);
    let adv = attack(&ModelTarget { model, mode: Mode::Train }, xs, labels, attack_cfg, rng);
    model.set_param_tracking(true);
    model.set_stat_tracking(true);
    let adv = adv?;

    // Inference phase.
    if model.is_robust() {
        model.resample(Phase::Inference);
    }
    model.zero_grad();
    let logits = model.forward(&adv, Mode::Train)?;
    let base = model.loss(&logits, labels)?;
    let rho = model.config.robust.as_ref().map(|r| r.weight_decay).unwrap_or(0.0);
    let mut reg_value = 0.0;
    let total = if rho > 0.0 {
        let mut reg: Option<Tensor> = None;
        for group in [model.registry.mixed_trainable(), model.rpan_parameter_group()] {
            if let Some(norm) = group_l2(&group)? {
                reg = Some(match reg {
                    Some(prev) => add(&prev, &norm)?,
                    None => norm,
                });
            }
        }
        match reg {
            Some(r) => {
                let scaled = scale_const(&r, rho);
                reg_value = scaled.item()?;
                add(&base, &scaled)?
            }
            None => base,
        }
    } else {
        base
    };
    let loss_value = total.item()?;
    total.backward()?;
    opt.step()?;
    opt.zero_grad();
    Ok(StepStats { loss: loss_value, regularizer: reg_value })
}
