//! SGD with the gradient-mask hook between backprop and the update.
//!
//! The update per entry is `θ ← θ − α·(v or ĝ) − α·λ·θ` where `ĝ` is the
//! masked gradient and `v` the momentum buffer fed with `ĝ`. Both momentum
//! and weight decay are gated by the mask support, so an entry whose support
//! is false is a strict no-op: its value is bit-identical before and after
//! the step, decay included. Masking the raw gradient before the momentum
//! accumulation keeps frozen entries from building stale velocity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::GradMask;
use crate::model::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Learning rate α.
    pub lr: f64,
    /// Momentum coefficient in `[0, 1)`; 0 disables the buffer.
    pub momentum: f64,
    /// Decoupled weight decay λ, gated by mask support.
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.02,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// SGD state: one velocity buffer per parameter when momentum is on.
pub struct Sgd {
    cfg: OptimConfig,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(cfg: OptimConfig) -> Result<Sgd> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> OptimConfig {
        self.cfg
    }

    fn velocity_for(&mut self, idx: usize, len: usize) -> &mut Vec<f64> {
        if self.velocity.len() <= idx {
            self.velocity.resize(idx + 1, Vec::new());
        }
        let v = &mut self.velocity[idx];
        if v.is_empty() {
            v.resize(len, 0.0);
        }
        v
    }

    /// One masked update over every parameter. Gradients must have been
    /// populated by a backward pass; they are consumed (reset) afterwards.
    pub fn step(&mut self, params: &ParamSet, mask: &GradMask) -> Result<()> {
        let lr = self.cfg.lr;
        let momentum = self.cfg.momentum;
        let decay = self.cfg.weight_decay;
        for (i, p) in params.iter().enumerate() {
            let support = mask.support(i);
            let scale = if p.maskable { mask.scale() } else { 1.0 };
            let velocity = if momentum > 0.0 {
                Some(self.velocity_for(i, p.tensor.len()))
            } else {
                None
            };
            p.tensor.with_data_grad_mut(|data, grad| -> Result<()> {
                let Some(g) = grad.take() else {
                    return Err(Error::Contract(format!(
                        "step without gradient for parameter {}",
                        p.name
                    )));
                };
                match velocity {
                    Some(v) => {
                        for j in 0..data.len() {
                            let active = support.is_active(j);
                            let masked = if active { g[j] * scale } else { 0.0 };
                            v[j] = momentum * v[j] + masked;
                            if active {
                                data[j] -= lr * v[j] + lr * decay * data[j];
                            }
                        }
                    }
                    None => {
                        for j in 0..data.len() {
                            if support.is_active(j) {
                                let masked = g[j] * scale;
                                data[j] -= lr * masked + lr * decay * data[j];
                            }
                        }
                    }
                }
                Ok(())
            })?;
        }
        Ok(())
    }

    /// The maskless code path: plain SGD over every entry. Kept separate so
    /// masked runs with `p = 0` can be regression-tested against it.
    pub fn step_unmasked(&mut self, params: &ParamSet) -> Result<()> {
        let lr = self.cfg.lr;
        let momentum = self.cfg.momentum;
        let decay = self.cfg.weight_decay;
        for (i, p) in params.iter().enumerate() {
            let velocity = if momentum > 0.0 {
                Some(self.velocity_for(i, p.tensor.len()))
            } else {
                None
            };
            p.tensor.with_data_grad_mut(|data, grad| -> Result<()> {
                let Some(g) = grad.take() else {
                    return Err(Error::Contract(format!(
                        "step without gradient for parameter {}",
                        p.name
                    )));
                };
                match velocity {
                    Some(v) => {
                        for j in 0..data.len() {
                            v[j] = momentum * v[j] + g[j];
                            data[j] -= lr * v[j] + lr * decay * data[j];
                        }
                    }
                    None => {
                        for j in 0..data.len() {
                            data[j] -= lr * g[j] + lr * decay * data[j];
                        }
                    }
                }
                Ok(())
            })?;
        }
        Ok(())
    }
}

/// Clear every gradient accumulator to exact zero.
pub fn zero_grads(params: &ParamSet) {
    for p in params.iter() {
        p.tensor.zero_grad();
    }
}
