//! Adam with bias correction, and a reduce-on-plateau learning-rate schedule.

use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter/gradient mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter {param} at element {index}")]
    NonFiniteGradient { param: usize, index: usize },
    #[error("non-finite scheduler metric {0}")]
    NonFiniteMetric(f64),
    #[error("invalid hyperparameter: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam state: hyperparameters, step counter and per-parameter moment estimates.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Zero moments shaped like `param_lens`.
    pub fn new(config: AdamConfig, param_lens: &[usize]) -> Result<Self> {
        if !(config.lr > 0.0) || !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) || !(config.eps > 0.0) {
            return Err(OptimError::Invalid(format!("{config:?}")));
        }
        Ok(Self {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            step_count: 0,
            first: param_lens.iter().map(|&n| vec![S::zero(); n]).collect(),
            second: param_lens.iter().map(|&n| vec![S::zero(); n]).collect(),
        })
    }

    pub fn for_tensors(config: AdamConfig, params: &[&Tensor<S>]) -> Result<Self> {
        let lens: Vec<usize> = params.iter().map(|t| t.len()).collect();
        Self::new(config, &lens)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moments(&self) -> &[Vec<S>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<S>] {
        &self.second
    }

    /// One bias-corrected Adam update. The whole step is rejected, leaving parameters and
    /// state untouched, if any gradient is non-finite or any shape disagrees.
    pub fn step(&mut self, params: &mut [&mut [S]], grads: &[Vec<S>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(OptimError::Shape(format!(
                "{} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, ((p, g), m)) in params.iter().zip(grads).zip(&self.first).enumerate() {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(OptimError::Shape(format!("parameter {i}: {} values, {} grads", p.len(), g.len())));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { param: i, index: j });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = S::of_f64(self.beta1);
        let b2 = S::of_f64(self.beta2);
        let one = S::one();
        let bc1 = S::of_f64(1.0 - self.beta1.powi(t));
        let bc2 = S::of_f64(1.0 - self.beta2.powi(t));
        let lr = S::of_f64(self.lr);
        let eps = S::of_f64(self.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub patience: u32,
    pub factor: f64,
    pub min_delta: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { patience: 25, factor: 0.1, min_delta: 0.0 }
    }
}

/// Minimizing reduce-on-plateau schedule: after more than `patience` epochs without
/// `metric < best − min_delta`, the rate is multiplied by `factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    config: PlateauConfig,
    lr: f64,
    best: f64,
    since_improvement: u32,
    reductions: u32,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig, initial_lr: f64) -> Result<Self> {
        if !(config.factor > 0.0 && config.factor < 1.0) || config.min_delta < 0.0 || !(initial_lr > 0.0) {
            return Err(OptimError::Invalid(format!("{config:?}, lr {initial_lr}")));
        }
        Ok(Self { config, lr: initial_lr, best: f64::INFINITY, since_improvement: 0, reductions: 0 })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_metric(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> u32 {
        self.since_improvement
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    /// Feeds one epoch's metric and returns the learning rate to use next.
    pub fn update(&mut self, metric: f64) -> Result<f64> {
        if !metric.is_finite() {
            return Err(OptimError::NonFiniteMetric(metric));
        }
        if metric < self.best - self.config.min_delta {
            self.best = metric;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        if self.since_improvement > self.config.patience {
            self.lr *= self.config.factor;
            self.since_improvement = 0;
            self.reductions += 1;
        }
        Ok(self.lr)
    }
}
