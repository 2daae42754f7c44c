//! Prioritized per-task trajectory storage and the on-disk dataset format.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;

use crate::codec::{put_f64s, put_string, put_u32, Reader};
use crate::envs::stack_frames;
use crate::error::{Error, FormatError, Result};

pub const DEFAULT_PRIORITY_ALPHA: f64 = 0.6;
pub const DEFAULT_PRIORITY_BETA_START: f64 = 0.4;
pub const DEFAULT_PRIORITY_BETA_END: f64 = 1.0;
pub const PRIORITY_FLOOR: f64 = 1e-6;

pub const DATASET_MAGIC: [u8; 4] = *b"XTRJ";
pub const DATASET_VERSION: u32 = 1;

/// One episode. Observations are single frames; stacked inputs are rebuilt on
/// demand with [`Trajectory::observation`].
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub task_id: String,
    pub frame_dim: usize,
    pub action_count: usize,
    /// `[(L+1) × frame_dim]`
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `[L × action_count]`
    pub policies: Vec<f64>,
    pub root_values: Vec<f64>,
}

impl Trajectory {
    pub fn new(task_id: &str, frame_dim: usize, action_count: usize, first_frame: Vec<f64>) -> Self {
        Self {
            task_id: task_id.to_string(),
            frame_dim,
            action_count,
            observations: first_frame,
            actions: Vec::new(),
            rewards: Vec::new(),
            policies: Vec::new(),
            root_values: Vec::new(),
        }
    }

    /// Records one transition: the action taken at the latest frame and what followed.
    pub fn push(&mut self, action: usize, reward: f64, policy: &[f64], root_value: f64, next_frame: &[f64]) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.policies.extend_from_slice(policy);
        self.root_values.push(root_value);
        self.observations.extend_from_slice(next_frame);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.observations[t * self.frame_dim..(t + 1) * self.frame_dim]
    }

    /// Stacked observation at `t`, zero-padded before the first frame.
    pub fn observation(&self, t: usize, stack: usize) -> Vec<f64> {
        stack_frames(&self.observations, self.frame_dim, t, stack)
    }

    pub fn policy(&self, t: usize) -> &[f64] {
        &self.policies[t * self.action_count..(t + 1) * self.action_count]
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.len();
        let fail = |m: String| Err(Error::Validation(format!("trajectory `{}`: {m}", self.task_id)));
        if self.frame_dim == 0 || self.action_count == 0 {
            return fail("frame_dim and action_count must be positive".into());
        }
        if self.observations.len() != (l + 1) * self.frame_dim {
            return fail(format!(
                "observations hold {} values, expected (L+1)·D = {}",
                self.observations.len(),
                (l + 1) * self.frame_dim
            ));
        }
        if self.rewards.len() != l || self.root_values.len() != l {
            return fail(format!("rewards/root_values lengths differ from L = {l}"));
        }
        if self.policies.len() != l * self.action_count {
            return fail(format!("policies hold {} values, expected L·|A|", self.policies.len()));
        }
        if let Some(a) = self.actions.iter().find(|&&a| a >= self.action_count) {
            return fail(format!("action {a} out of range"));
        }
        for t in 0..l {
            let p = self.policy(t);
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&x| !(x >= 0.0)) {
                return fail(format!("policy row {t} is not a distribution (sum {sum})"));
            }
        }
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        if !finite(&self.observations) || !finite(&self.rewards) || !finite(&self.root_values) {
            return fail("non-finite entries".into());
        }
        Ok(())
    }
}

/// Draws returned by [`ReplayBuffer::sample`].
#[derive(Clone, Debug, PartialEq)]
pub struct PrioritySample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    task_id: String,
    capacity: usize,
    trajectories: VecDeque<Trajectory>,
    priorities: VecDeque<Vec<f64>>,
    /// Prefix sums of trajectory lengths, one longer than `trajectories`.
    starts: Vec<usize>,
}

impl ReplayBuffer {
    /// `capacity` counts transitions.
    pub fn new(task_id: &str, capacity: usize) -> Self {
        Self {
            task_id: task_id.to_string(),
            capacity,
            trajectories: VecDeque::new(),
            priorities: VecDeque::new(),
            starts: vec![0],
        }
    }

    pub fn from_trajectories(task_id: &str, trajectories: &[Trajectory]) -> Result<Self> {
        let total = trajectories.iter().map(Trajectory::len).sum::<usize>();
        let mut buf = Self::new(task_id, total.max(1));
        for t in trajectories {
            buf.append(t.clone(), None)?;
        }
        Ok(buf)
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn transitions(&self) -> usize {
        *self.starts.last().unwrap()
    }

    pub fn trajectories(&self) -> impl ExactSizeIterator<Item = &Trajectory> {
        self.trajectories.iter()
    }

    pub fn trajectory(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn max_priority(&self) -> Option<f64> {
        self.priorities.iter().flatten().copied().reduce(f64::max)
    }

    pub fn priority(&self, index: usize) -> Result<f64> {
        let (i, t) = self.locate(index)?;
        Ok(self.priorities[i][t])
    }

    /// Adds a trajectory whose transitions start at `initial_priority`, or at
    /// the current maximum (1.0 for an empty buffer) when `None`.
    pub fn append(&mut self, traj: Trajectory, initial_priority: Option<f64>) -> Result<()> {
        traj.validate()?;
        if traj.is_empty() {
            return Err(Error::Validation(format!("trajectory `{}` has no transitions", traj.task_id)));
        }
        let p = match initial_priority {
            Some(p) if !(p.is_finite() && p >= 0.0) => {
                return Err(Error::Argument(format!("initial priority {p} is not a finite non-negative number")))
            }
            Some(p) => p.max(PRIORITY_FLOOR),
            None => self.max_priority().unwrap_or(1.0),
        };
        self.priorities.push_back(vec![p; traj.len()]);
        self.trajectories.push_back(traj);
        while self.trajectories.len() > 1 && self.total_len() > self.capacity {
            self.trajectories.pop_front();
            self.priorities.pop_front();
        }
        self.rebuild_starts();
        Ok(())
    }

    fn total_len(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    fn rebuild_starts(&mut self) {
        self.starts.clear();
        self.starts.push(0);
        let mut acc = 0;
        for t in &self.trajectories {
            acc += t.len();
            self.starts.push(acc);
        }
    }

    /// Maps a flat transition index to `(trajectory, step)`.
    pub fn locate(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.transitions() {
            return Err(Error::Argument(format!(
                "transition index {index} out of range for {} transitions",
                self.transitions()
            )));
        }
        let i = self.starts.partition_point(|&s| s <= index) - 1;
        Ok((i, index - self.starts[i]))
    }

    /// `P(i) ∝ p_i^α` for every stored transition.
    pub fn probabilities(&self, alpha: f64) -> Vec<f64> {
        let scaled: Vec<f64> = self.priorities.iter().flatten().map(|p| p.powf(alpha)).collect();
        let sum: f64 = scaled.iter().sum();
        scaled.into_iter().map(|s| s / sum).collect()
    }

    /// Draws `batch` transitions with replacement. Fewer stored transitions
    /// than `batch` is an error unless `allow_small` is set.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        alpha: f64,
        beta: f64,
        allow_small: bool,
        rng: &mut R,
    ) -> Result<PrioritySample> {
        let n = self.transitions();
        if n == 0 {
            return Err(Error::Unavailable(format!("replay buffer `{}` is empty", self.task_id)));
        }
        if n < batch && !allow_small {
            return Err(Error::Unavailable(format!(
                "replay buffer `{}` holds {n} transitions, batch needs {batch}",
                self.task_id
            )));
        }
        let probs = self.probabilities(alpha);
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        let mut indices = Vec::with_capacity(batch);
        for _ in 0..batch {
            let u = rng.random::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(n - 1);
            indices.push(i);
        }
        let raw: Vec<f64> = indices.iter().map(|&i| (n as f64 * probs[i]).powf(-beta)).collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        let weights = raw.into_iter().map(|w| w / max).collect();
        Ok(PrioritySample { indices, weights })
    }

    pub fn update_priorities(&mut self, indices: &[usize], priorities: &[f64]) -> Result<()> {
        if indices.len() != priorities.len() {
            return Err(Error::Argument("indices and priorities differ in length".into()));
        }
        let mut located = Vec::with_capacity(indices.len());
        for (&idx, &p) in indices.iter().zip(priorities) {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Argument(format!("priority {p} for index {idx} is invalid")));
            }
            located.push(self.locate(idx)?);
        }
        for ((i, t), &p) in located.into_iter().zip(priorities) {
            self.priorities[i][t] = p.max(PRIORITY_FLOOR);
        }
        Ok(())
    }
}

/// Linear anneal of the importance exponent over training.
pub fn beta_schedule(step: usize, total: usize) -> f64 {
    if total == 0 {
        return DEFAULT_PRIORITY_BETA_END;
    }
    let f = (step.min(total)) as f64 / total as f64;
    DEFAULT_PRIORITY_BETA_START + (DEFAULT_PRIORITY_BETA_END - DEFAULT_PRIORITY_BETA_START) * f
}

/// Trajectories of one task plus the header fields of the dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task_id: String,
    pub action_count: usize,
    pub frame_dim: usize,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(task_id: &str, action_count: usize, frame_dim: usize) -> Self {
        Self {
            task_id: task_id.to_string(),
            action_count,
            frame_dim,
            trajectories: Vec::new(),
        }
    }

    pub fn transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.trajectories {
            if t.task_id != self.task_id || t.action_count != self.action_count || t.frame_dim != self.frame_dim {
                return Err(Error::Validation(format!(
                    "trajectory header ({}, |A|={}, D={}) differs from dataset ({}, |A|={}, D={})",
                    t.task_id, t.action_count, t.frame_dim, self.task_id, self.action_count, self.frame_dim
                )));
            }
            t.validate()?;
        }
        Ok(())
    }
}

fn usize_to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Argument(format!("{what} {v} exceeds the file format's range")))
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(&DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    put_string(&mut out, &ds.task_id);
    put_u32(&mut out, usize_to_u32(ds.action_count, "action count")?);
    put_u32(&mut out, usize_to_u32(ds.frame_dim, "frame dim")?);
    put_u32(&mut out, usize_to_u32(ds.trajectories.len(), "trajectory count")?);
    for t in &ds.trajectories {
        put_u32(&mut out, usize_to_u32(t.len(), "trajectory length")?);
        put_f64s(&mut out, &t.observations);
        let actions: Vec<f64> = t.actions.iter().map(|&a| a as f64).collect();
        put_f64s(&mut out, &actions);
        put_f64s(&mut out, &t.rewards);
        put_f64s(&mut out, &t.policies);
        put_f64s(&mut out, &t.root_values);
    }
    let crc = crc32fast::hash(&out[8..]);
    put_u32(&mut out, crc);
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(FormatError::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let task_id = r.string()?;
    let action_count = r.u32()? as usize;
    let frame_dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut trajectories = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let l = r.u32()? as usize;
        let observations = r.f64s((l + 1) * frame_dim)?;
        let raw_actions = r.f64s(l)?;
        let rewards = r.f64s(l)?;
        let policies = r.f64s(l * action_count)?;
        let root_values = r.f64s(l)?;
        let mut actions = Vec::with_capacity(l);
        for a in raw_actions {
            if !(a >= 0.0 && a.fract() == 0.0 && (a as usize) < action_count) {
                return Err(FormatError::Malformed(format!("invalid action {a}")));
            }
            actions.push(a as usize);
        }
        trajectories.push(Trajectory {
            task_id: task_id.clone(),
            frame_dim,
            action_count,
            observations,
            actions,
            rewards,
            policies,
            root_values,
        });
    }
    let payload_end = r.position();
    let stored = r.u32()?;
    if r.remaining() != 0 {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    let computed = crc32fast::hash(&bytes[8..payload_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(Dataset {
        task_id,
        action_count,
        frame_dim,
        trajectories,
    })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes).map_err(|e| Error::format(path, e))
}
