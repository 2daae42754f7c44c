//! Optimizer state shared by every training loop.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::OptimSection;
use crate::error::Result;
use crate::model::{Component, WorldModel};
use crate::nn::{lr_schedule, sgd_step, Gradient, MomentumBuffer};

/// A model under training, its target-network copy and the optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: WorldModel,
    pub target: WorldModel,
    momentum: MomentumBuffer,
    frozen: Vec<Component>,
    optim: OptimSection,
    step: usize,
    total_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub lr: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
}

impl Trainer {
    /// `frozen` components never receive updates.
    pub fn new(model: WorldModel, optim: OptimSection, total_steps: usize, frozen: &[Component]) -> Self {
        let mut momentum = MomentumBuffer::new(model.params().len());
        for &c in frozen {
            for r in model.component_ranges(c) {
                momentum.freeze(r);
            }
        }
        Self {
            target: model.clone(),
            model,
            momentum,
            frozen: frozen.to_vec(),
            optim,
            step: 0,
            total_steps,
        }
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn lr(&self) -> f64 {
        lr_schedule(
            self.step,
            self.total_steps,
            self.optim.lr_start,
            self.optim.lr_end,
            self.optim.lr_mode,
        )
    }

    /// Masks frozen components, clips, and applies one SGD step at the
    /// scheduled learning rate (or `lr_override`).
    pub fn apply(&mut self, mut grad: Gradient, lr_override: Option<f64>) -> Result<StepInfo> {
        WorldModel::mask_gradient(&mut grad, &self.frozen);
        let grad_norm = grad.clip_norm(self.optim.max_grad_norm);
        let lr = lr_override.unwrap_or_else(|| self.lr());
        let backup = (self.model.params().clone(), self.momentum.clone());
        if let Err(e) = sgd_step(
            self.model.params_mut(),
            &grad,
            &mut self.momentum,
            lr,
            self.optim.momentum,
            self.optim.weight_decay,
        ) {
            // keep the last finite parameters
            *self.model.params_mut() = backup.0;
            self.momentum = backup.1;
            return Err(e);
        }
        self.step += 1;
        Ok(StepInfo { lr, grad_norm })
    }

    pub fn refresh_target(&mut self) {
        self.target = self.model.clone();
    }

    pub fn into_model(self) -> WorldModel {
        self.model
    }
}

/// Uniform sampling without replacement that reshuffles after every pass,
/// so every index is drawn equally often per epoch.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    epochs: usize,
}

impl EpochSampler {
    pub fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
            epochs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Completed passes over the data.
    pub fn epochs(&self) -> usize {
        self.epochs.saturating_sub(1)
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < count {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
                self.epochs += 1;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Splits `total` into `parts` shares differing by at most one, larger first.
pub fn equal_shares(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epoch_sampler_visits_everything_once_per_pass() {
        let mut s = EpochSampler::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = s.next_batch(5, &mut rng);
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        let more = s.next_batch(7, &mut rng);
        assert_eq!(more.len(), 7);
        assert_eq!(s.epochs(), 2);
    }

    #[test]
    fn shares_are_balanced() {
        assert_eq!(equal_shares(32, 2), vec![16, 16]);
        assert_eq!(equal_shares(10, 4), vec![3, 3, 2, 2]);
        assert_eq!(equal_shares(10, 4).iter().sum::<usize>(), 10);
    }
}
