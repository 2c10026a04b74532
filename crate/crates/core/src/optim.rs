//! AdamW with decoupled weight decay and a cosine-annealed learning rate.

use crate::numcore::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("nonfinite gradient {value} in parameter block {block}, element {index}")]
    NonFiniteGradient { block: usize, index: usize, value: f64 },
    #[error("parameter/gradient/state layout mismatch: {0}")]
    Layout(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr_max: 1e-5,
            lr_min: 1e-6,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// `lr_min + (lr_max − lr_min)·(1 + cos(πt/T))/2`.
pub fn cosine_lr(t: u64, total: u64, lr_max: f64, lr_min: f64) -> Result<f64, OptimError> {
    if total == 0 {
        return Err(OptimError::Schedule("total steps must be at least 1".into()));
    }
    if t > total {
        return Err(OptimError::Schedule(format!("step {t} beyond total {total}")));
    }
    if t == 0 {
        return Ok(lr_max);
    }
    if t == total {
        return Ok(lr_min);
    }
    let phase = PI * t as f64 / total as f64;
    Ok(lr_min + (lr_max - lr_min) * (1.0 + phase.cos()) / 2.0)
}

/// Moment estimates and step counter for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub config: AdamWConfig,
    pub total_steps: u64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptState {
    /// Fresh state shaped like `params`, annealed over `total_steps` updates.
    pub fn new(config: AdamWConfig, params: &[&Tensor], total_steps: u64) -> Self {
        Self {
            config,
            total_steps,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Learning rate the next call to [`OptState::step`] will use.
    pub fn current_lr(&self) -> Result<f64, OptimError> {
        cosine_lr(
            self.step.min(self.total_steps),
            self.total_steps,
            self.config.lr_max,
            self.config.lr_min,
        )
    }

    /// One scheduled AdamW update.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<(), OptimError> {
        let lr = self.current_lr()?;
        self.step_with_lr(params, grads, lr)
    }

    /// One AdamW update at an explicit learning rate. The gradient is checked
    /// in full before anything is modified.
    pub fn step_with_lr(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        lr: f64,
    ) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(OptimError::Layout(format!(
                "{} parameter blocks, {} gradient blocks, {} state blocks",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (block, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[block].len() {
                return Err(OptimError::Layout(format!("block {block} has mismatched lengths")));
            }
            if let Some((index, &value)) = g.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(OptimError::NonFiniteGradient { block, index, value });
            }
        }

        self.step += 1;
        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (block, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[block];
            let v = &mut self.v[block];
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *pi);
            }
        }
        Ok(())
    }
}
