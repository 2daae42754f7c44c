//! Value, Reanalyze and teacher targets, and assembly of training batches.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mcts::{run_search, SearchConfig};
use crate::model::{UnrollBatch, WorldModel};
use crate::nn::Matrix;
use crate::replay::{PrioritySample, ReplayBuffer, Trajectory};

pub const DEFAULT_TD_STEPS: usize = 5;
pub const DEFAULT_REANALYZE_RATIO: f64 = 1.0;
pub const DEFAULT_TARGET_NET_INTERVAL: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSource {
    Reanalyze,
    Teacher,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetSpec {
    pub td_steps: usize,
    pub discount: f64,
    pub unroll_steps: usize,
    pub reanalyze_ratio: f64,
    pub source: TargetSource,
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1]", self.discount)));
        }
        if self.td_steps == 0 {
            return Err(Error::Config("td_steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reanalyze_ratio) {
            return Err(Error::Config(format!("reanalyze ratio {} outside [0, 1]", self.reanalyze_ratio)));
        }
        Ok(())
    }
}

/// `z_t = Σ_{i<k} γ^i u_{t+i} + γ^k v(t+k)`, truncated at the end of the
/// trajectory, which counts as terminal (value 0). `bootstrap` is only
/// called for indices strictly inside the trajectory.
pub fn value_target(rewards: &[f64], t: usize, k: usize, discount: f64, bootstrap: impl FnOnce(usize) -> f64) -> f64 {
    let l = rewards.len();
    let mut z = 0.0;
    let mut g = 1.0;
    for &u in rewards.iter().take(l.min(t + k)).skip(t) {
        z += g * u;
        g *= discount;
    }
    if t + k < l {
        z += g * bootstrap(t + k);
    }
    z
}

/// Fresh search policy at step `t` of a trajectory.
pub fn reanalyze_policy<R: Rng + ?Sized>(
    model: &WorldModel,
    traj: &Trajectory,
    t: usize,
    stack: usize,
    cfg: &SearchConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let obs = traj.observation(t, stack);
    Ok(run_search(model, &obs, cfg, 1.0, rng)?.policy_target)
}

/// Targets a frozen teacher provides for one position.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    pub policy: Vec<f64>,
    pub value: f64,
    pub reward: f64,
}

pub fn teacher_targets(
    teacher: &WorldModel,
    traj: &Trajectory,
    t: usize,
    td_steps: usize,
    discount: f64,
    stack: usize,
) -> Result<TeacherTargets> {
    let (_, pred) = teacher.initial_inference(&traj.observation(t, stack))?;
    let boot = if t + td_steps < traj.len() {
        teacher.initial_inference(&traj.observation(t + td_steps, stack))?.1.value
    } else {
        0.0
    };
    let value = value_target(&traj.rewards, t, td_steps, discount, |_| boot);
    Ok(TeacherTargets {
        policy: pred.policy,
        value,
        reward: traj.rewards[t],
    })
}

/// Teacher predictions precomputed for every position of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherCache {
    /// Per trajectory, `[L × A]` teacher policies.
    pub policies: Vec<Vec<f64>>,
    /// Per trajectory, `L` value targets built with the teacher's bootstrap.
    pub values: Vec<Vec<f64>>,
}

impl TeacherCache {
    pub fn build<'a>(
        teacher: &WorldModel,
        trajectories: impl IntoIterator<Item = &'a Trajectory>,
        td_steps: usize,
        discount: f64,
        stack: usize,
    ) -> Result<Self> {
        let mut policies = Vec::new();
        let mut values = Vec::new();
        for traj in trajectories {
            let l = traj.len();
            let rows: Vec<Vec<f64>> = (0..=l).map(|t| traj.observation(t, stack)).collect();
            let obs = Matrix::from_rows(&rows)?;
            let latents = teacher.represent_batch(&obs)?;
            let (teacher_policies, raw_values) = teacher.predict_batch(&latents)?;
            let mut pol = Vec::with_capacity(l * teacher.action_count());
            for t in 0..l {
                pol.extend_from_slice(teacher_policies.row(t));
            }
            let z: Vec<f64> = (0..l)
                .map(|t| value_target(&traj.rewards, t, td_steps, discount, |i| raw_values[i]))
                .collect();
            policies.push(pol);
            values.push(z);
        }
        Ok(Self { policies, values })
    }
}

/// Where policy and value targets come from when assembling a batch.
pub enum TargetMode<'a> {
    /// Fresh search with `model` for a `reanalyze_ratio` share of positions
    /// (stored search policies otherwise); values bootstrap from `target_model`.
    Reanalyze {
        model: &'a WorldModel,
        target_model: &'a WorldModel,
        search: &'a SearchConfig,
    },
    Teacher(&'a TeacherCache),
}

/// Builds the unrolled training batch for sampled transitions. Unroll steps
/// past the end of a trajectory use a random action, zero reward and value,
/// a uniform policy and the final observation.
pub fn build_batch<R: Rng + ?Sized>(
    buf: &ReplayBuffer,
    sample: &PrioritySample,
    spec: &TargetSpec,
    stack: usize,
    mode: &TargetMode<'_>,
    rng: &mut R,
) -> Result<UnrollBatch> {
    spec.validate()?;
    let k_max = spec.unroll_steps;
    let b = sample.indices.len();
    let first = buf.trajectories().next().ok_or_else(|| Error::Unavailable("empty replay buffer".into()))?;
    let a_count = first.action_count;
    let obs_dim = first.frame_dim * stack;
    let positions: Vec<(usize, usize)> = sample
        .indices
        .iter()
        .map(|&i| buf.locate(i))
        .collect::<Result<_>>()?;

    let bootstrap: Option<Vec<Vec<f64>>> = match mode {
        TargetMode::Reanalyze { target_model, .. } => Some(bootstrap_values(buf, &positions, spec, stack, target_model)?),
        TargetMode::Teacher(_) => None,
    };

    let mut observations = Matrix::zeros(b, obs_dim);
    let mut actions = vec![Vec::with_capacity(k_max); b];
    let mut target_rewards = Matrix::zeros(b, k_max);
    let mut target_policies = vec![Matrix::zeros(b, a_count); k_max + 1];
    let mut target_values = Matrix::zeros(b, k_max + 1);
    let mut next_observations = vec![Matrix::zeros(b, obs_dim); k_max];
    let uniform = vec![1.0 / a_count as f64; a_count];

    for (row, &(ti, t)) in positions.iter().enumerate() {
        let traj = buf.trajectory(ti);
        let l = traj.len();
        observations.row_mut(row).copy_from_slice(&traj.observation(t, stack));
        for k in 0..=k_max {
            let pos = t + k;
            let inside = pos < l;
            if k < k_max {
                let action = if inside { traj.actions[pos] } else { rng.random_range(0..a_count) };
                actions[row].push(action);
                target_rewards.row_mut(row)[k] = if inside { traj.rewards[pos] } else { 0.0 };
                next_observations[k]
                    .row_mut(row)
                    .copy_from_slice(&traj.observation((pos + 1).min(l), stack));
            }
            let (policy, value) = if !inside {
                (uniform.clone(), 0.0)
            } else {
                match mode {
                    TargetMode::Teacher(cache) => {
                        let p = cache.policies[ti][pos * a_count..(pos + 1) * a_count].to_vec();
                        (p, cache.values[ti][pos])
                    }
                    TargetMode::Reanalyze { model, search, .. } => {
                        let fresh = spec.reanalyze_ratio >= 1.0
                            || (spec.reanalyze_ratio > 0.0 && rng.random::<f64>() < spec.reanalyze_ratio);
                        let p = if fresh {
                            reanalyze_policy(model, traj, pos, stack, search, rng)?
                        } else {
                            traj.policy(pos).to_vec()
                        };
                        let boots = &bootstrap.as_ref().unwrap()[row];
                        let z = value_target(&traj.rewards, pos, spec.td_steps, spec.discount, |_| boots[k]);
                        (p, z)
                    }
                }
            };
            target_policies[k].row_mut(row).copy_from_slice(&policy);
            target_values.row_mut(row)[k] = value;
        }
    }
    Ok(UnrollBatch {
        observations,
        actions,
        target_rewards,
        target_policies,
        target_values,
        next_observations,
        importance_weights: sample.weights.clone(),
    })
}

/// Target-network values at `t + k + td` for every row and unroll step, in
/// one batched inference. Entries whose index falls outside the trajectory
/// are never read and stay 0.
fn bootstrap_values(
    buf: &ReplayBuffer,
    positions: &[(usize, usize)],
    spec: &TargetSpec,
    stack: usize,
    target_model: &WorldModel,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut slots = Vec::new();
    for (row, &(ti, t)) in positions.iter().enumerate() {
        let traj = buf.trajectory(ti);
        for k in 0..=spec.unroll_steps {
            let i = t + k + spec.td_steps;
            if t + k < traj.len() && i < traj.len() {
                rows.push(traj.observation(i, stack));
                slots.push((row, k));
            }
        }
    }
    let mut out = vec![vec![0.0; spec.unroll_steps + 1]; positions.len()];
    if rows.is_empty() {
        return Ok(out);
    }
    let values = target_model.values_batch(&Matrix::from_rows(&rows)?)?;
    for ((row, k), v) in slots.into_iter().zip(values) {
        out[row][k] = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_computed_target() {
        let z = value_target(&[1.0, 0.0, 2.0, 5.0], 0, 3, 0.5, |i| {
            assert_eq!(i, 3);
            4.0
        });
        assert_eq!(z, 2.0);
    }

    #[test]
    fn zero_rewards_zero_bootstrap() {
        assert_eq!(value_target(&[0.0; 6], 1, 3, 0.9, |_| 0.0), 0.0);
    }

    #[test]
    fn truncates_at_terminal() {
        let z = value_target(&[0.0, 1.0], 1, 5, 0.9, |_| panic!("no bootstrap past the end"));
        assert_eq!(z, 1.0);
        let z = value_target(&[1.0, 1.0, 1.0], 0, 3, 0.5, |_| panic!("terminal at t+k"));
        assert_eq!(z, 1.75);
    }

    fn shape() -> ModelShape {
        ModelShape {
            obs_dim: 4,
            latent_dim: 3,
            hidden_dim: 5,
            action_count: 2,
        }
    }

    fn traj(len: usize) -> Trajectory {
        let mut t = Trajectory::new("t", 2, 2, vec![0.1, 0.2]);
        for i in 0..len {
            t.push(i % 2, i as f64 * 0.1, &[0.25, 0.75], 0.0, &[i as f64, 1.0]);
        }
        t
    }

    #[test]
    fn single_action_reanalyze_is_certain() {
        let s = ModelShape { action_count: 1, ..shape() };
        let m = WorldModel::random(s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut t = Trajectory::new("t", 2, 1, vec![0.0, 0.0]);
        t.push(0, 0.0, &[1.0], 0.0, &[1.0, 1.0]);
        let p = reanalyze_policy(&m, &t, 0, 2, &SearchConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn reanalyze_is_seeded() {
        let m = WorldModel::random(shape(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = traj(3);
        let cfg = SearchConfig::default();
        let a = reanalyze_policy(&m, &t, 1, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = reanalyze_policy(&m, &t, 1, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_reward_teacher_value_is_discounted_bootstrap() {
        let m = WorldModel::random(shape(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut t = traj(6);
        t.rewards.iter_mut().for_each(|r| *r = 0.0);
        let tt = teacher_targets(&m, &t, 1, 3, 0.9, 2).unwrap();
        let (_, p4) = m.initial_inference(&t.observation(4, 2)).unwrap();
        assert!((tt.value - 0.9f64.powi(3) * p4.value).abs() < 1e-15);
        let (_, p1) = m.initial_inference(&t.observation(1, 2)).unwrap();
        assert_eq!(tt.policy, p1.policy);
    }

    #[test]
    fn cache_agrees_with_direct_targets() {
        let m = WorldModel::random(shape(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let t = traj(5);
        let cache = TeacherCache::build(&m, [&t], 2, 0.9, 2).unwrap();
        for i in 0..5 {
            let tt = teacher_targets(&m, &t, i, 2, 0.9, 2).unwrap();
            for (a, b) in tt.policy.iter().zip(&cache.policies[0][i * 2..i * 2 + 2]) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((tt.value - cache.values[0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_pads_past_the_end() {
        let m = WorldModel::random(shape(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let buf = ReplayBuffer::from_trajectories("t", &[traj(2)]).unwrap();
        let sample = PrioritySample {
            indices: vec![1],
            weights: vec![1.0],
        };
        let spec = TargetSpec {
            td_steps: 2,
            discount: 0.5,
            unroll_steps: 3,
            reanalyze_ratio: 0.0,
            source: TargetSource::Reanalyze,
        };
        let search = SearchConfig::default();
        let mode = TargetMode::Reanalyze {
            model: &m,
            target_model: &m,
            search: &search,
        };
        let batch = build_batch(&buf, &sample, &spec, 2, &mode, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        batch.validate(&shape()).unwrap();
        assert_eq!(batch.actions[0][0], 1);
        assert_eq!(batch.target_rewards.row(0), &[0.1, 0.0, 0.0]);
        assert_eq!(batch.target_values.row(0), &[0.1, 0.0, 0.0, 0.0]);
        assert_eq!(batch.target_policies[0].row(0), &[0.25, 0.75]);
        assert_eq!(batch.target_policies[1].row(0), &[0.5, 0.5]);
        let last = t_obs(&traj(2), 2);
        assert_eq!(batch.next_observations[2].row(0), last.as_slice());
    }

    fn t_obs(t: &Trajectory, i: usize) -> Vec<f64> {
        t.observation(i, 2)
    }
}
