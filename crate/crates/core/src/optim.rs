//! Optimizers and learning-rate schedules.
//!
//! Optimizer state is kept per parameter slot in the order the slots are
//! passed to `step`; callers must pass parameters in the same order on every
//! step. Frozen parameters are skipped entirely and never get a buffer update.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::tensor::Tensor;

fn ensure_buffers(buffers: &mut Vec<Tensor>, params: &[Param<'_>]) -> Result<()> {
    if buffers.is_empty() {
        *buffers = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        return Ok(());
    }
    if buffers.len() != params.len() {
        return Err(Error::invalid(format!(
            "optimizer tracks {} parameters, step got {}",
            buffers.len(),
            params.len()
        )));
    }
    for (b, p) in buffers.iter().zip(params) {
        if b.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer state",
                lhs: b.shape().to_vec(),
                rhs: p.value.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn check_grad(p: &Param<'_>) -> Result<()> {
    if p.grad.shape() != p.value.shape() {
        return Err(Error::ShapeMismatch {
            op: "optimizer grad",
            lhs: p.grad.shape().to_vec(),
            rhs: p.value.shape().to_vec(),
        });
    }
    Ok(())
}

/// SGD with heavy-ball momentum and coupled L2 weight decay:
/// `v ← μ·v + (g + λ·θ)`, `θ ← θ − η·v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || momentum < 0.0 || weight_decay < 0.0 {
            return Err(Error::invalid("sgd requires lr > 0, momentum >= 0, weight_decay >= 0"));
        }
        Ok(SgdMomentum {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: &mut [Param<'_>]) -> Result<()> {
        ensure_buffers(&mut self.velocity, params)?;
        for (p, v) in params.iter_mut().zip(self.velocity.iter_mut()) {
            if p.frozen {
                continue;
            }
            check_grad(p)?;
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for ((theta, vel), &g) in value.iter_mut().zip(v.data_mut()).zip(grad) {
                *vel = self.momentum * *vel + (g + self.weight_decay * *theta);
                *theta -= self.lr * *vel;
            }
            p.value.ensure_finite("sgd step")?;
        }
        Ok(())
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::invalid("adam requires lr > 0"));
        }
        Ok(Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut [Param<'_>]) -> Result<()> {
        ensure_buffers(&mut self.m, params)?;
        ensure_buffers(&mut self.v, params)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            if p.frozen {
                continue;
            }
            check_grad(p)?;
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (((theta, mi), vi), &g) in value
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(grad)
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.value.ensure_finite("adam step")?;
        }
        Ok(())
    }
}

/// Cosine annealing from `eta0` at `t = 0` down to `eta_min` at `t = t_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineAnnealing {
    pub eta0: f64,
    pub eta_min: f64,
    pub t_max: usize,
}

impl CosineAnnealing {
    pub fn new(eta0: f64, eta_min: f64, t_max: usize) -> Result<Self> {
        if t_max == 0 || eta_min > eta0 {
            return Err(Error::invalid("cosine schedule needs t_max > 0 and eta_min <= eta0"));
        }
        Ok(CosineAnnealing { eta0, eta_min, t_max })
    }

    pub fn lr(&self, t: usize) -> Result<f64> {
        if t > self.t_max {
            return Err(Error::invalid(format!("epoch {t} beyond t_max {}", self.t_max)));
        }
        Ok(self.eta_min
            + (self.eta0 - self.eta_min) * (1.0 + (PI * t as f64 / self.t_max as f64).cos()) / 2.0)
    }
}

/// Halves (by `factor`) the learning rate once the monitored loss has failed to
/// strictly improve for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReduceOnPlateau {
    pub patience: usize,
    pub factor: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(patience: usize, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::invalid("plateau factor must be in (0, 1)"));
        }
        Ok(ReduceOnPlateau {
            patience,
            factor,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    pub fn update(&mut self, val_loss: f64, lr: f64) -> Result<f64> {
        if !val_loss.is_finite() {
            return Err(Error::NonFinite("plateau monitor"));
        }
        if val_loss < self.best {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            return Ok(lr * self.factor);
        }
        Ok(lr)
    }
}

/// Linear scaling rule: `0.3 · batch / 256`.
pub fn initial_lr_from_batch(batch_size: usize) -> f64 {
    0.3 * batch_size as f64 / 256.0
}

/// Schedule floor used for contrastive training: a fiftieth of the initial rate.
pub fn eta_min_for(lr: f64) -> f64 {
    lr / 50.0
}
