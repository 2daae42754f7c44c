//! Online finetuning on a target task with concurrent, similarity-weighted
//! learning on the offline pretraining tasks.

use crate::config::RunConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::mcts::TemperatureSchedule;
use crate::metrics::{LossTerms, MetricsRecord};
use crate::model::{ez_loss, Component, LossBreakdown, LossCoefficients, UnrollBatch, WorldModel};
use crate::nn::{Gradient, ParamVector};
use crate::replay::{PrioritySample, ReplayBuffer, PRIORITY_FLOOR};
use crate::seeding::{stream_rng, Stream};
use crate::selfplay::{evaluate, Actor};
use crate::targets::{build_batch, TargetMode, TargetSource, TeacherCache};
use crate::trainer::{EpochSampler, Trainer};

pub use crate::selfplay::{evaluate_with_seeds, EvalSummary};

pub const DEFAULT_SIM_THRESHOLD: f64 = 0.1;

/// Cosine similarity of two gradients; 0 when either has zero norm.
pub fn gradient_similarity(target: &Gradient, task: &Gradient) -> Result<f64> {
    let dot = target.dot(task)?;
    let norms = target.norm() * task.norm();
    if norms == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / norms)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightPhase {
    Warmup,
    /// Inside a cycle's first `N` steps; the last one closes the window.
    Measuring { closes_window: bool },
    Fixed,
}

/// Per-task weights η recomputed once per cycle from the share of
/// measurement steps whose similarity beat the threshold.
///
/// Training steps are counted from 1. Steps `1..=W` are warmup with η = 1.
/// After warmup, cycles of `T` steps begin; the first `N` steps of each
/// cycle count similarities, and at the `N`th the new η = s/N takes effect
/// for every later step until the next window closes.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskWeightState {
    pub eta: Vec<f64>,
    pub counters: Vec<usize>,
    /// η under the alternative timing, where a window's result waits for the
    /// start of the next cycle. Logged for comparison only.
    pub eta_alt: Vec<f64>,
    pending_alt: Option<Vec<f64>>,
    pub cycle: usize,
    pub window: usize,
    pub warmup: usize,
    pub threshold: f64,
    step: usize,
}

impl TaskWeightState {
    pub fn new(tasks: usize, cycle: usize, window: usize, warmup: usize, threshold: f64) -> Result<Self> {
        if window == 0 || window > cycle {
            return Err(Error::Config(format!("window {window} must be in 1..={cycle}")));
        }
        Ok(Self {
            eta: vec![1.0; tasks],
            counters: vec![0; tasks],
            eta_alt: vec![1.0; tasks],
            pending_alt: None,
            cycle,
            window,
            warmup,
            threshold,
            step: 0,
        })
    }

    pub fn tasks(&self) -> usize {
        self.eta.len()
    }

    /// Steps processed so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    pub fn phase_of(&self, n: usize) -> WeightPhase {
        if n <= self.warmup {
            return WeightPhase::Warmup;
        }
        let c = (n - self.warmup - 1) % self.cycle;
        if c < self.window {
            WeightPhase::Measuring {
                closes_window: c + 1 == self.window,
            }
        } else {
            WeightPhase::Fixed
        }
    }

    /// Phase of the step about to be taken.
    pub fn next_phase(&self) -> WeightPhase {
        self.phase_of(self.step + 1)
    }

    pub fn needs_similarity(&self) -> bool {
        matches!(self.next_phase(), WeightPhase::Measuring { .. })
    }

    fn starts_cycle(&self, n: usize) -> bool {
        n > self.warmup && (n - self.warmup - 1) % self.cycle == 0
    }

    /// Alternative-timing weights in effect for the step about to be taken.
    pub fn next_eta_alt(&self) -> Vec<f64> {
        match &self.pending_alt {
            Some(p) if self.starts_cycle(self.step + 1) => p.clone(),
            _ => self.eta_alt.clone(),
        }
    }

    /// Advances one step. `sims` is required while measuring and ignored
    /// otherwise. Returns whether η changed at this step.
    pub fn update(&mut self, sims: Option<&[f64]>) -> Result<bool> {
        let n = self.step + 1;
        if self.starts_cycle(n) {
            if let Some(p) = self.pending_alt.take() {
                self.eta_alt = p;
            }
        }
        let mut updated = false;
        if let WeightPhase::Measuring { closes_window } = self.phase_of(n) {
            let sims = sims.ok_or_else(|| Error::Argument(format!("step {n} is a measurement step and needs similarities")))?;
            if sims.len() != self.tasks() {
                return Err(Error::Argument(format!(
                    "{} similarities for {} tasks",
                    sims.len(),
                    self.tasks()
                )));
            }
            for (s, &sim) in self.counters.iter_mut().zip(sims) {
                if sim > self.threshold {
                    *s += 1;
                }
            }
            if closes_window {
                for (eta, s) in self.eta.iter_mut().zip(&mut self.counters) {
                    *eta = *s as f64 / self.window as f64;
                    *s = 0;
                }
                self.pending_alt = Some(self.eta.clone());
                updated = true;
            }
        }
        self.step = n;
        Ok(updated)
    }
}

/// Functional form of [`TaskWeightState::update`].
pub fn update_task_weights(state: &TaskWeightState, sims: Option<&[f64]>) -> Result<TaskWeightState> {
    let mut next = state.clone();
    next.update(sims)?;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptOutput {
    pub target: LossBreakdown,
    pub offline: Vec<LossBreakdown>,
    /// `L(target) + Σ η_i L(task_i)`.
    pub total: f64,
    /// `G_target + Σ η_i G_i`.
    pub gradient: Gradient,
    pub target_gradient: Gradient,
    pub offline_gradients: Vec<Gradient>,
}

/// Target-task loss at weight 1 plus η-weighted offline-task losses.
pub fn adapt_loss(
    model: &WorldModel,
    target_batch: &UnrollBatch,
    offline_batches: &[&UnrollBatch],
    eta: &[f64],
    coeffs: LossCoefficients,
) -> Result<AdaptOutput> {
    if offline_batches.len() != eta.len() {
        return Err(Error::Argument(format!(
            "{} offline batches but {} task weights",
            offline_batches.len(),
            eta.len()
        )));
    }
    let (target, target_gradient) = ez_loss(model, target_batch, coeffs)?;
    let mut gradient = target_gradient.clone();
    let mut total = target.total;
    let mut offline = Vec::with_capacity(eta.len());
    let mut offline_gradients = Vec::with_capacity(eta.len());
    for (batch, &w) in offline_batches.iter().zip(eta) {
        let (b, g) = ez_loss(model, batch, coeffs)?;
        gradient.add_scaled(&g, w)?;
        total += w * b.total;
        offline.push(b);
        offline_gradients.push(g);
    }
    Ok(AdaptOutput {
        target,
        offline,
        total,
        gradient,
        target_gradient,
        offline_gradients,
    })
}

/// Copies the selected components' segments from `source` into `target`.
pub fn load_components(target: &mut WorldModel, source: &ParamVector, subset: &[Component]) -> Result<()> {
    let layout = target.params().layout().clone();
    for &c in subset {
        for seg in layout.with_prefix(c.prefix()) {
            let src = source.layout().segment(seg.name()).filter(|s| s.shape() == seg.shape()).ok_or_else(|| {
                Error::Config(format!(
                    "component {c} cannot be loaded: source lacks a matching `{}` {:?}",
                    seg.name(),
                    seg.shape()
                ))
            })?;
            let values = source.values()[src.range()].to_vec();
            target.params_mut().values_mut()[seg.range()].copy_from_slice(&values);
        }
    }
    Ok(())
}

/// Pretraining data retained during finetuning, with teacher targets.
#[derive(Clone, Debug)]
pub struct OfflineTask {
    pub spec: EnvSpec,
    pub buffer: ReplayBuffer,
    pub teacher: TeacherCache,
}

#[derive(Clone, Debug, Default)]
pub struct FinetuneOptions {
    /// Model copies taken at evenly spaced env steps (the last at the budget end).
    pub snapshots: usize,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: WorldModel,
    pub records: Vec<MetricsRecord>,
    pub snapshots: Vec<WorldModel>,
    /// `(env_steps, mean return)` at every evaluation point.
    pub evals: Vec<(usize, f64)>,
    pub final_eta: Vec<f64>,
    /// Set when training stopped on a non-finite value; `model` then holds
    /// the last finite parameters.
    pub aborted: Option<String>,
}

struct Loop<'a> {
    cfg: &'a RunConfig,
    offline: &'a [OfflineTask],
    trainer: Trainer,
    actor_model: WorldModel,
    buffer: ReplayBuffer,
    samplers: Vec<EpochSampler>,
    weights: Option<TaskWeightState>,
    sample_rng: rand_chacha::ChaCha8Rng,
    offline_rng: rand_chacha::ChaCha8Rng,
    cross_task: bool,
}

impl Loop<'_> {
    fn eta(&self) -> Vec<f64> {
        self.weights
            .as_ref()
            .map_or_else(|| vec![1.0; self.offline.len()], |w| w.eta.clone())
    }

    fn train_step(&mut self, env_steps: usize, lr_override: Option<f64>) -> Result<MetricsRecord> {
        let cfg = self.cfg;
        let total = self.trainer.total_steps();
        let progress = if total == 0 {
            1.0
        } else {
            (self.trainer.step() as f64 / total as f64).min(1.0)
        };
        let beta = cfg.replay.beta_start + (cfg.replay.beta_end - cfg.replay.beta_start) * progress;
        let sample = self
            .buffer
            .sample(cfg.finetune.target_batch, cfg.replay.alpha, beta, true, &mut self.sample_rng)?;
        let search = cfg.search_config();
        let target_batch = build_batch(
            &self.buffer,
            &sample,
            &cfg.target_spec(TargetSource::Reanalyze),
            cfg.env.stack,
            &TargetMode::Reanalyze {
                model: &self.trainer.model,
                target_model: &self.trainer.target,
                search: &search,
            },
            &mut self.sample_rng,
        )?;

        let m = self.offline.len();
        let eta = self.eta();
        let eta_alt = self.weights.as_ref().map_or_else(|| eta.clone(), |w| w.next_eta_alt());
        let measuring = self.weights.as_ref().is_some_and(|w| w.needs_similarity());
        let needed: Vec<usize> = if self.cross_task {
            (0..m).filter(|&i| measuring || eta[i] > 0.0).collect()
        } else {
            Vec::new()
        };
        let teacher_spec = cfg.target_spec(TargetSource::Teacher);
        let mut offline_batches = Vec::with_capacity(needed.len());
        for &i in &needed {
            let task = &self.offline[i];
            let indices = self.samplers[i].next_batch(cfg.finetune.offline_batch, &mut self.offline_rng);
            let s = PrioritySample {
                weights: vec![1.0; indices.len()],
                indices,
            };
            offline_batches.push(build_batch(
                &task.buffer,
                &s,
                &teacher_spec,
                cfg.env.stack,
                &TargetMode::Teacher(&task.teacher),
                &mut self.offline_rng,
            )?);
        }
        let refs: Vec<&UnrollBatch> = offline_batches.iter().collect();
        let used_eta: Vec<f64> = needed.iter().map(|&i| eta[i]).collect();
        let out = adapt_loss(&self.trainer.model, &target_batch, &refs, &used_eta, cfg.loss_coefficients())?;

        let mut sim = vec![None; m];
        let mut offline_loss = vec![None; m];
        for (j, &i) in needed.iter().enumerate() {
            offline_loss[i] = Some(out.offline[j].total);
            if measuring {
                sim[i] = Some(gradient_similarity(&out.target_gradient, &out.offline_gradients[j])?);
            }
        }
        let eta_updated = match &mut self.weights {
            Some(w) => {
                let full: Option<Vec<f64>> = measuring.then(|| sim.iter().map(|s| s.unwrap_or(0.0)).collect());
                w.update(full.as_deref())?
            }
            None => false,
        };

        let info = self.trainer.apply(out.gradient, lr_override)?;
        let priorities: Vec<f64> = (0..sample.indices.len())
            .map(|r| (target_batch.target_values.get(r, 0) - out.target.value_predictions[r]).abs() + PRIORITY_FLOOR)
            .collect();
        self.buffer.update_priorities(&sample.indices, &priorities)?;
        let step = self.trainer.step();
        if step % cfg.targets.target_net_interval == 0 {
            self.trainer.refresh_target();
        }
        if step % cfg.finetune.selfplay_interval == 0 {
            self.actor_model = self.trainer.model.clone();
        }
        Ok(MetricsRecord::Train {
            step,
            env_steps,
            lr: info.lr,
            grad_norm: info.grad_norm,
            loss: LossTerms::from(&out.target),
            offline_loss,
            adapt_total: out.total,
            eta,
            eta_alt,
            sim,
            eta_updated,
        })
    }
}

/// Env steps at which the loop evaluates: 0 and `eval_points` evenly spaced
/// points up to the budget.
pub fn eval_schedule(env_steps: usize, eval_points: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=eval_points).map(|i| i * env_steps / eval_points.max(1)).collect();
    v.dedup();
    v
}

/// Self-play on the target task with one training step per env step once
/// the replay buffer holds `replay.min_size` transitions.
pub fn finetune_loop(
    cfg: &RunConfig,
    pretrained: Option<&ParamVector>,
    offline: &[OfflineTask],
    opts: &FinetuneOptions,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let ft = &cfg.finetune;
    let seed = cfg.run.seed;
    let spec = cfg.target_env();
    let shape = cfg.model_shape();

    let mut model = WorldModel::random(shape, &mut stream_rng(seed, Stream::Init))?;
    if ft.load_pretrained {
        let src = pretrained.ok_or_else(|| Error::Config("finetune.load_pretrained is set but no checkpoint was given".into()))?;
        load_components(&mut model, src, &ft.load_components)?;
    }
    let cross_task = ft.cross_task;
    if cross_task && offline.is_empty() {
        return Err(Error::Config("cross-task learning needs at least one offline task".into()));
    }
    let offline: &[OfflineTask] = if cross_task { offline } else { &[] };
    let weights = if cross_task && ft.dynamic_weights {
        Some(TaskWeightState::new(
            offline.len(),
            ft.cycle_steps,
            ft.window_steps,
            cfg.warmup_steps(),
            ft.sim_threshold,
        )?)
    } else {
        None
    };
    let frozen: &[Component] = if ft.freeze_repr { &[Component::Representation] } else { &[] };
    let total_train = ft.env_steps.saturating_sub(cfg.replay.min_size);
    let trainer = Trainer::new(model, cfg.optim.clone(), total_train, frozen);

    let mut lp = Loop {
        cfg,
        offline,
        actor_model: trainer.model.clone(),
        trainer,
        buffer: ReplayBuffer::new(&spec.task_id(), cfg.replay.capacity),
        samplers: offline.iter().map(|t| EpochSampler::new(t.buffer.transitions())).collect(),
        weights,
        sample_rng: stream_rng(seed, Stream::Sample),
        offline_rng: stream_rng(seed, Stream::Offline),
        cross_task,
    };

    let mut env_rng = stream_rng(seed, Stream::Env);
    let mut act_rng = stream_rng(seed, Stream::Act);
    let search = cfg.search_config();
    let schedule = TemperatureSchedule::default();
    let mut actor = Actor::new(&spec, &mut env_rng)?;
    let evals_at = if ft.eval_points > 0 {
        eval_schedule(ft.env_steps, ft.eval_points)
    } else {
        Vec::new()
    };
    let snaps_at: Vec<usize> = (1..=opts.snapshots).map(|i| i * ft.env_steps / opts.snapshots).collect();

    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut evals = Vec::new();
    let mut aborted = None;
    let mut run_eval = |lp: &Loop<'_>, env_steps: usize, records: &mut Vec<MetricsRecord>| -> Result<()> {
        let s = evaluate(
            &lp.trainer.model,
            &spec,
            cfg.eval.episodes,
            &search,
            &mut stream_rng(seed, Stream::Eval),
        )?;
        evals.push((env_steps, s.mean_return));
        records.push(MetricsRecord::Eval {
            step: lp.trainer.step(),
            env_steps,
            mean_return: s.mean_return,
            returns: s.returns,
        });
        Ok(())
    };

    if evals_at.first() == Some(&0) {
        run_eval(&lp, 0, &mut records)?;
    }
    for env_step in 1..=ft.env_steps {
        let temperature = schedule.temperature((env_step - 1) as f64 / ft.env_steps as f64);
        if let Some(ep) = actor.step(&lp.actor_model, &search, temperature, &mut env_rng, &mut act_rng)? {
            lp.buffer.append(ep.trajectory, None)?;
        }
        if lp.buffer.transitions() >= cfg.replay.min_size.max(1) {
            match lp.train_step(env_step, None) {
                Ok(r) => records.push(r),
                Err(Error::Numeric(m)) => {
                    aborted = Some(m);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if evals_at.contains(&env_step) {
            run_eval(&lp, env_step, &mut records)?;
        }
        if snaps_at.contains(&env_step) {
            snapshots.push(lp.trainer.model.clone());
        }
    }
    if aborted.is_none() && ft.extra_lowlr_steps > 0 && lp.buffer.transitions() > 0 {
        let lr = cfg.optim.lr_end / 10.0;
        for _ in 0..ft.extra_lowlr_steps {
            match lp.train_step(ft.env_steps, Some(lr)) {
                Ok(r) => records.push(r),
                Err(Error::Numeric(m)) => {
                    aborted = Some(m);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if aborted.is_none() && ft.eval_points > 0 {
            run_eval(&lp, ft.env_steps, &mut records)?;
        }
    }
    let final_eta = lp.eta();
    Ok(FinetuneOutcome {
        model: lp.trainer.into_model(),
        records,
        snapshots,
        evals,
        final_eta,
        aborted,
    })
}
