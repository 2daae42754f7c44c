use std::ops::Range;

use super::params::{Gradient, ParamVector};
use crate::error::{Error, Result};

/// Optimizer defaults.
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_LR_START: f64 = 0.2;
pub const DEFAULT_LR_END: f64 = 0.02;

/// Momentum buffer plus the parameter ranges that must never move.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumBuffer {
    velocity: Vec<f64>,
    frozen: Vec<Range<usize>>,
}

impl MomentumBuffer {
    pub fn new(len: usize) -> Self {
        Self {
            velocity: vec![0.0; len],
            frozen: Vec::new(),
        }
    }

    /// Marks a flat range as non-trainable.
    pub fn freeze(&mut self, range: Range<usize>) {
        self.frozen.push(range);
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    fn is_frozen(&self, i: usize) -> bool {
        self.frozen.iter().any(|r| r.contains(&i))
    }
}

/// One SGD step: `v ← μ·v + g + λ·θ`, `θ ← θ − lr·v`.
///
/// Weight decay enters here rather than through the loss so that per-task
/// loss gradients stay free of the shared regularizer.
pub fn sgd_step(
    params: &mut ParamVector,
    grad: &Gradient,
    state: &mut MomentumBuffer,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Argument(format!("learning rate must be positive, got {lr}")));
    }
    if grad.len() != params.len() || state.velocity.len() != params.len() {
        return Err(Error::Config("optimizer state, gradient and parameters differ in length".into()));
    }
    grad.check_finite()?;
    let has_frozen = !state.frozen.is_empty();
    let theta = params.values_mut();
    for i in 0..theta.len() {
        if has_frozen && state.is_frozen(i) {
            continue;
        }
        let v = momentum * state.velocity[i] + grad.values()[i] + weight_decay * theta[i];
        state.velocity[i] = v;
        theta[i] -= lr * v;
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("parameters after sgd step".into()));
    }
    Ok(())
}

/// How the learning rate moves from its start to its end value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrMode {
    Linear,
    /// Holds `lr_start` until `fraction · total`, then `lr_end`.
    Step { fraction: f64 },
}

pub fn lr_schedule(step: usize, total: usize, lr_start: f64, lr_end: f64, mode: LrMode) -> f64 {
    if total == 0 {
        return lr_start;
    }
    let step = step.min(total);
    if step == total {
        return lr_end;
    }
    let progress = step as f64 / total as f64;
    match mode {
        LrMode::Linear => lr_start + (lr_end - lr_start) * progress,
        LrMode::Step { fraction } => {
            if progress < fraction {
                lr_start
            } else {
                lr_end
            }
        }
    }
}
