//! Optimization and evaluation: SGD with momentum, reduce-on-plateau
//! learning-rate scheduling, and classification metrics.

mod metrics;

pub use metrics::{argmax_rows, compute_metrics, ClassMetrics, MetricsReport};

use crate::error::{Error, Result};
use crate::nn::Param;

/// SGD with classical momentum. Frozen parameters receive no updates; a
/// non-finite gradient aborts the step.
pub struct Sgd {
    params: Vec<Param>,
    lr: f64,
    momentum: f64,
    buffers: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(params: Vec<Param>, lr: f64, momentum: f64) -> Self {
        let buffers = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self { params, lr, momentum, buffers }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    pub fn step(&mut self) -> Result<()> {
        for (p, buf) in self.params.iter().zip(self.buffers.iter_mut()) {
            if !p.trainable() {
                continue;
            }
            let Some(grad) = p.grad() else { continue };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient in parameter {}",
                    p.name()
                )));
            }
            let mut data = p.tensor().data().to_vec();
            if self.momentum == 0.0 {
                for (d, &g) in data.iter_mut().zip(&grad) {
                    *d -= self.lr * g;
                }
            } else {
                for ((d, v), &g) in data.iter_mut().zip(buf.iter_mut()).zip(&grad) {
                    *v = self.momentum * *v + g;
                    *d -= self.lr * *v;
                }
            }
            p.set_data(data)?;
        }
        Ok(())
    }
}

/// Reduce-on-plateau schedule monitoring a loss-like metric (lower is
/// better). After `patience` epochs without improvement beyond `threshold`,
/// the rate is multiplied by `factor`, never dropping below `min_lr`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub threshold: f64,
    pub min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self { factor: 0.1, patience: 10, threshold: 1e-4, min_lr: 1e-6, best: f64::INFINITY, bad_epochs: 0 }
    }
}

impl PlateauScheduler {
    /// Feed one epoch's monitored value; returns the (possibly reduced)
    /// learning rate.
    pub fn observe(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best - self.threshold {
            self.best = metric;
            self.bad_epochs = 0;
            lr
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.bad_epochs = 0;
                (lr * self.factor).max(self.min_lr)
            } else {
                lr
            }
        }
    }
}

/// One line of the structured per-epoch training log.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} train_loss={:.6} val_loss={:.6} val_acc={:.4} lr={:.8}",
            self.epoch, self.train_loss, self.val_loss, self.val_acc, self.lr
        )
    }
}
