//! Adam optimization with inverse-time learning-rate decay.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::Params;

/// Loss applied to the network output during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Softmax cross-entropy against integer class masks.
    CrossEntropy,
    /// Mean squared error against a target image.
    SquaredError,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::SquaredError => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<LossKind> {
        match s {
            "cross-entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "mse" => Ok(LossKind::SquaredError),
            other => Err(Error::Config(format!(
                "unknown loss '{}', expected cross-entropy or mse",
                other
            ))),
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Inverse-time decay rate: `lr = initial / (1 + decay * step)`.
    pub lr_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub augment: bool,
    /// Evaluate the training set every this many epochs (0 = never).
    pub metrics_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 2,
            initial_lr: 0.01,
            lr_decay: 3e-5,
            seed: 0,
            loss: LossKind::CrossEntropy,
            augment: false,
            metrics_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0) || !self.initial_lr.is_finite() {
            return Err(Error::Config(format!(
                "initial learning rate must be positive, got {}",
                self.initial_lr
            )));
        }
        if self.lr_decay < 0.0 || !self.lr_decay.is_finite() {
            return Err(Error::Config(format!(
                "learning rate decay must be non-negative, got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Learning rate for a 0-based global step under inverse-time decay.
pub fn lr_at(initial: f64, decay: f64, step: usize) -> f32 {
    (initial / (1.0 + decay * step as f64)) as f32
}

/// Adam with the standard bias-corrected first and second moments.
pub struct Adam {
    beta1: f32,
    beta2: f32,
    eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &Params) -> Adam {
        Adam::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &Params, beta1: f32, beta2: f32, eps: f32) -> Adam {
        let m = params.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        let v = params.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        Adam { beta1, beta2, eps, step: 0, m, v }
    }

    /// Applies one update using each parameter's accumulated gradient.
    /// Parameters whose gradient buffer is absent are treated as having a
    /// zero gradient.
    pub fn step(&mut self, params: &mut Params, lr: f32) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, model has {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.step as i32);
        let (inv_bc1, inv_bc2) = ((1.0 / bc1) as f32, (1.0 / bc2) as f32);

        for (i, (_, p)) in params.iter_mut().enumerate() {
            if self.m[i].len() != p.tensor.numel() {
                return Err(Error::State(format!(
                    "optimizer state for {} holds {} values, parameter has {}",
                    p.name,
                    self.m[i].len(),
                    p.tensor.numel()
                )));
            }
            let (data, grad) = p.tensor.data_and_grad();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match grad {
                Some(g) => {
                    for j in 0..data.len() {
                        let gj = g[j];
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                        data[j] -= lr * (m[j] * inv_bc1) / ((v[j] * inv_bc2).sqrt() + self.eps);
                    }
                }
                None => {
                    for j in 0..data.len() {
                        m[j] *= self.beta1;
                        v[j] *= self.beta2;
                        data[j] -= lr * (m[j] * inv_bc1) / ((v[j] * inv_bc2).sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}
