use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Adam {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Apply one update using each parameter's gradient buffer. Parameters
    /// without a gradient buffer are treated as having zero gradient.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::dim("adam_step", "parameter tensors", self.first.len(), params.len()));
        }
        for (i, p) in params.iter().enumerate() {
            if p.len() != self.first[i].len() {
                return Err(Error::dim("adam_step", format!("parameter {i}"), self.first[i].len(), p.len()));
            }
            if let Some(g) = p.grad() {
                if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("gradient of parameter {i} at element {j}"),
                    });
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (((theta, &gk), mk), vk) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mk = b1 * *mk + (1.0 - b1) * gk;
                *vk = b2 * *vk + (1.0 - b2) * gk * gk;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning-rate schedule driven by the epoch-mean loss.
///
/// An epoch improves when its loss is strictly below the best seen so far.
/// Otherwise a counter increments; once it exceeds `patience` the learning
/// rate is multiplied by `factor` (never below `min_lr`) and the counter
/// resets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub best_loss: f64,
    pub epochs_since_improvement: usize,
    pub reductions: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(0.2, 3, 1e-7)
    }
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            factor,
            patience,
            min_lr,
            best_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            reductions: 0,
        }
    }

    /// Feed one epoch's mean loss; returns the learning rate to use next.
    pub fn step(&mut self, epoch_loss: f64, lr: f64) -> f64 {
        if epoch_loss < self.best_loss {
            self.best_loss = epoch_loss;
            self.epochs_since_improvement = 0;
            return lr;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement > self.patience {
            self.epochs_since_improvement = 0;
            let reduced = (lr * self.factor).max(self.min_lr);
            if reduced < lr {
                self.reductions += 1;
            }
            return reduced;
        }
        lr
    }

    pub fn at_floor(&self, lr: f64) -> bool {
        lr <= self.min_lr
    }
}
