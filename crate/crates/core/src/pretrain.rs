//! Offline stage: dataset generation, per-task teachers trained by offline
//! RL, multi-task student distillation, and the multi-game offline RL and
//! behavioral-cloning baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::finetune::{finetune_loop, load_components, FinetuneOptions};
use crate::mcts::SearchConfig;
use crate::model::{bc_loss, ez_loss, Component, WorldModel};
use crate::nn::{Layout, Matrix, ParamVector};
use crate::replay::{Dataset, PrioritySample, ReplayBuffer, Trajectory, PRIORITY_FLOOR};
use crate::seeding::{stream_rng, Stream};
use crate::selfplay::{play_episode, EvalSummary};
use crate::targets::{build_batch, TargetMode, TargetSource, TeacherCache};
use crate::trainer::{equal_shares, EpochSampler, Trainer};

/// Trains a scratch agent online on `spec` for `collect.generator_env_steps`
/// and returns `collect.checkpoints` snapshots taken at evenly spaced env
/// steps, the raw material for a mixed-quality dataset.
pub fn generator_checkpoints(cfg: &RunConfig, spec: &EnvSpec) -> Result<Vec<WorldModel>> {
    let mut c = cfg.clone();
    c.finetune.target = spec.clone();
    c.finetune.env_steps = cfg.collect.generator_env_steps;
    c.finetune.cross_task = false;
    c.finetune.load_pretrained = false;
    c.finetune.dynamic_weights = false;
    c.finetune.freeze_repr = false;
    c.finetune.eval_points = 0;
    c.finetune.extra_lowlr_steps = 0;
    let out = finetune_loop(
        &c,
        None,
        &[],
        &FinetuneOptions {
            snapshots: cfg.collect.checkpoints,
        },
    )?;
    if let Some(m) = out.aborted {
        return Err(Error::Numeric(format!("generator run on {} diverged: {m}", spec.task_id())));
    }
    Ok(out.snapshots)
}

/// Rolls out every checkpoint's noisy search policy for `episodes_per_ckpt`
/// episodes and concatenates the trajectories.
pub fn collect_offline_dataset(
    spec: &EnvSpec,
    checkpoints: &[WorldModel],
    episodes_per_ckpt: usize,
    search: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if checkpoints.is_empty() {
        return Err(Error::Argument("data collection needs at least one checkpoint".into()));
    }
    spec.validate()?;
    let mut ds = Dataset::new(&spec.task_id(), spec.action_count(), spec.frame_dim());
    for model in checkpoints {
        for _ in 0..episodes_per_ckpt {
            let mut env_rng = ChaCha8Rng::from_rng(&mut *rng);
            let ep = play_episode(model, spec, search, 1.0, &mut env_rng, rng)?;
            ds.trajectories.push(ep.trajectory);
        }
    }
    Ok(ds)
}

/// Result of an offline training run. `model` holds the last finite
/// parameters when `aborted` is set.
#[derive(Clone, Debug)]
pub struct OfflineRun {
    pub model: WorldModel,
    /// Total loss per training step.
    pub losses: Vec<f64>,
    pub aborted: Option<String>,
}

fn check_datasets(cfg: &RunConfig, datasets: &[&Dataset]) -> Result<()> {
    if datasets.is_empty() {
        return Err(Error::Argument("at least one dataset is required".into()));
    }
    let shape = cfg.model_shape();
    for ds in datasets {
        ds.validate()?;
        if ds.trajectories.is_empty() || ds.transitions() == 0 {
            return Err(Error::Validation(format!("dataset {} is empty", ds.task_id)));
        }
        if ds.frame_dim * cfg.env.stack != shape.obs_dim || ds.action_count != shape.action_count {
            return Err(Error::Config(format!(
                "dataset {} has frame size {} and {} actions, the model expects {} and {}",
                ds.task_id,
                ds.frame_dim,
                ds.action_count,
                shape.obs_dim / cfg.env.stack,
                shape.action_count
            )));
        }
    }
    Ok(())
}

fn beta_at(cfg: &RunConfig, step: usize, total: usize) -> f64 {
    let p = if total == 0 { 1.0 } else { (step as f64 / total as f64).min(1.0) };
    cfg.replay.beta_start + (cfg.replay.beta_end - cfg.replay.beta_start) * p
}

/// Batch shares for one step. The remainder rotates so every task receives
/// the same number of samples over any `m` consecutive steps.
fn rotated_shares(batch: usize, m: usize, step: usize) -> Vec<usize> {
    let mut s = equal_shares(batch, m);
    s.rotate_right(step % m);
    s
}

/// EfficientZero training on fixed buffers: prioritized batches split
/// equally across tasks, Reanalyze policy targets from the training model and
/// value bootstraps from the target network. No environment interaction.
fn train_offline(cfg: &RunConfig, datasets: &[&Dataset], steps: usize) -> Result<OfflineRun> {
    cfg.validate()?;
    check_datasets(cfg, datasets)?;
    let seed = cfg.run.seed;
    let model = WorldModel::random(cfg.model_shape(), &mut stream_rng(seed, Stream::Init))?;
    let mut trainer = Trainer::new(model, cfg.optim.clone(), steps, &[]);
    let mut buffers = datasets
        .iter()
        .map(|d| ReplayBuffer::from_trajectories(&d.task_id, &d.trajectories))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = stream_rng(seed, Stream::Sample);
    let spec = cfg.target_spec(TargetSource::Reanalyze);
    let search = cfg.search_config();
    let coeffs = cfg.loss_coefficients();
    let batch = cfg.pretrain.batch_size;
    let m = buffers.len();
    let mut losses = Vec::with_capacity(steps);

    let step_once = |trainer: &mut Trainer, buffers: &mut [ReplayBuffer], rng: &mut ChaCha8Rng| -> Result<f64> {
        let beta = beta_at(cfg, trainer.step(), steps);
        let shares = rotated_shares(batch, m, trainer.step());
        let mut total_grad = None;
        let mut total_loss = 0.0;
        let mut updates = Vec::new();
        for (i, buf) in buffers.iter().enumerate() {
            if shares[i] == 0 {
                continue;
            }
            let sample = buf.sample(shares[i], cfg.replay.alpha, beta, true, rng)?;
            let b = build_batch(
                buf,
                &sample,
                &spec,
                cfg.env.stack,
                &TargetMode::Reanalyze {
                    model: &trainer.model,
                    target_model: &trainer.target,
                    search: &search,
                },
                rng,
            )?;
            let (loss, g) = ez_loss(&trainer.model, &b, coeffs)?;
            let w = shares[i] as f64 / batch as f64;
            total_loss += w * loss.total;
            match &mut total_grad {
                None => {
                    let mut g = g;
                    g.scale(w);
                    total_grad = Some(g);
                }
                Some(acc) => acc.add_scaled(&g, w)?,
            }
            let p: Vec<f64> = (0..sample.indices.len())
                .map(|r| (b.target_values.get(r, 0) - loss.value_predictions[r]).abs() + PRIORITY_FLOOR)
                .collect();
            updates.push((i, sample.indices, p));
        }
        trainer.apply(total_grad.expect("batch size is positive"), None)?;
        for (i, idx, p) in updates {
            buffers[i].update_priorities(&idx, &p)?;
        }
        if trainer.step() % cfg.targets.target_net_interval == 0 {
            trainer.refresh_target();
        }
        Ok(total_loss)
    };

    let mut aborted = None;
    for _ in 0..steps {
        match step_once(&mut trainer, &mut buffers, &mut rng) {
            Ok(l) => losses.push(l),
            Err(Error::Numeric(msg)) => {
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(OfflineRun {
        model: trainer.into_model(),
        losses,
        aborted,
    })
}

/// Single-task offline RL teacher with a `pretrain.teacher_steps` budget.
pub fn train_teacher(cfg: &RunConfig, dataset: &Dataset) -> Result<OfflineRun> {
    train_offline(cfg, &[dataset], cfg.pretrain.teacher_steps)
}

/// One model trained by offline RL on all datasets at once with its own
/// Reanalyze targets, `pretrain.multigame_steps` budget.
pub fn multigame_offline_rl(cfg: &RunConfig, datasets: &[&Dataset]) -> Result<OfflineRun> {
    train_offline(cfg, datasets, cfg.pretrain.multigame_steps)
}

/// Splits off the last `fraction` of trajectories (at least one trajectory
/// always stays for training).
pub fn split_heldout(trajectories: &[Trajectory], fraction: f64) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let n = trajectories.len();
    let held = ((n as f64 * fraction).round() as usize).min(n.saturating_sub(1));
    let (a, b) = trajectories.split_at(n - held);
    (a.to_vec(), b.to_vec())
}

/// Mean `KL(teacher ‖ student)` of root policies over every position of the
/// given trajectories.
pub fn heldout_kl(teacher: &WorldModel, student: &WorldModel, trajectories: &[Trajectory], stack: usize) -> Result<f64> {
    let rows: Vec<Vec<f64>> = trajectories
        .iter()
        .flat_map(|t| (0..t.len()).map(move |i| t.observation(i, stack)))
        .collect();
    if rows.is_empty() {
        return Err(Error::Unavailable("no positions to measure the policy divergence on".into()));
    }
    let obs = Matrix::from_rows(&rows)?;
    let (p, _) = teacher.predict_batch(&teacher.represent_batch(&obs)?)?;
    let (q, _) = student.predict_batch(&student.represent_batch(&obs)?)?;
    let mut total = 0.0;
    for r in 0..rows.len() {
        total += p
            .row(r)
            .iter()
            .zip(q.row(r))
            .filter(|(&pi, _)| pi > 0.0)
            .map(|(&pi, &qi)| pi * (pi / qi).ln())
            .sum::<f64>();
    }
    Ok(total / rows.len() as f64)
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub model: WorldModel,
    pub losses: Vec<f64>,
    /// Policy term of the student loss per step.
    pub policy_losses: Vec<f64>,
    /// Samples drawn from each task over the whole run.
    pub task_samples: Vec<usize>,
    /// Held-out `KL(teacher ‖ student)` per task; measured on the training
    /// trajectories when nothing is held out.
    pub heldout_kl: Vec<f64>,
    pub aborted: Option<String>,
}

/// Trains one student on all tasks against frozen teacher predictions.
/// Every batch takes an equal share from each task, drawn epoch-wise.
pub fn distill_student(cfg: &RunConfig, teachers: &[&WorldModel], datasets: &[&Dataset]) -> Result<DistillOutcome> {
    cfg.validate()?;
    check_datasets(cfg, datasets)?;
    if teachers.len() != datasets.len() {
        return Err(Error::Config(format!(
            "{} teachers for {} datasets",
            teachers.len(),
            datasets.len()
        )));
    }
    let shape = cfg.model_shape();
    for (t, d) in teachers.iter().zip(datasets) {
        if t.shape() != shape {
            return Err(Error::Config(format!(
                "teacher for {} has shape {:?}, the student has {:?}",
                d.task_id,
                t.shape(),
                shape
            )));
        }
    }
    let seed = cfg.run.seed;
    let stack = cfg.env.stack;
    let td = &cfg.targets;
    let mut buffers = Vec::new();
    let mut caches = Vec::new();
    let mut held = Vec::new();
    for (t, d) in teachers.iter().zip(datasets) {
        let (train, test) = split_heldout(&d.trajectories, cfg.pretrain.heldout_fraction);
        caches.push(TeacherCache::build(t, &train, td.td_steps, td.discount, stack)?);
        buffers.push(ReplayBuffer::from_trajectories(&d.task_id, &train)?);
        held.push(if test.is_empty() { train } else { test });
    }

    let steps = cfg.pretrain.distill_steps;
    let model = WorldModel::random(shape, &mut stream_rng(seed, Stream::Init))?;
    let mut trainer = Trainer::new(model, cfg.optim.clone(), steps, &[]);
    let mut samplers: Vec<EpochSampler> = buffers.iter().map(|b| EpochSampler::new(b.transitions())).collect();
    let mut rng = stream_rng(seed, Stream::Offline);
    let spec = cfg.target_spec(TargetSource::Teacher);
    let coeffs = cfg.loss_coefficients();
    let batch = cfg.pretrain.batch_size;
    let m = buffers.len();
    let mut losses = Vec::with_capacity(steps);
    let mut policy_losses = Vec::with_capacity(steps);
    let mut task_samples = vec![0; m];
    let mut aborted = None;

    for _ in 0..steps {
        let shares = rotated_shares(batch, m, trainer.step());
        let mut step = || -> Result<(f64, f64)> {
            let mut grad = None;
            let (mut total, mut policy) = (0.0, 0.0);
            for i in 0..m {
                if shares[i] == 0 {
                    continue;
                }
                let indices = samplers[i].next_batch(shares[i], &mut rng);
                task_samples[i] += indices.len();
                let sample = PrioritySample {
                    weights: vec![1.0; indices.len()],
                    indices,
                };
                let b = build_batch(&buffers[i], &sample, &spec, stack, &TargetMode::Teacher(&caches[i]), &mut rng)?;
                let (loss, g) = ez_loss(&trainer.model, &b, coeffs)?;
                let w = shares[i] as f64 / batch as f64;
                total += w * loss.total;
                policy += w * loss.policy_loss;
                match &mut grad {
                    None => {
                        let mut g = g;
                        g.scale(w);
                        grad = Some(g);
                    }
                    Some(acc) => acc.add_scaled(&g, w)?,
                }
            }
            trainer.apply(grad.expect("batch size is positive"), None)?;
            Ok((total, policy))
        };
        match step() {
            Ok((l, p)) => {
                losses.push(l);
                policy_losses.push(p);
            }
            Err(Error::Numeric(msg)) => {
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let model = trainer.into_model();
    let heldout_kl = teachers
        .iter()
        .zip(&held)
        .map(|(t, h)| heldout_kl(t, &model, h, stack))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistillOutcome {
        model,
        losses,
        policy_losses,
        task_samples,
        heldout_kl,
        aborted,
    })
}

/// The representation and prediction segments of a model, the parameters a
/// behavioral-cloning policy consists of.
pub fn policy_params(model: &WorldModel) -> ParamVector {
    let src = model.params();
    let mut b = Layout::builder();
    let mut values = Vec::new();
    for seg in src.layout().segments() {
        if seg.name().starts_with(Component::Representation.prefix()) || seg.name().starts_with(Component::Prediction.prefix()) {
            b.push(seg.name(), seg.shape());
            values.extend_from_slice(&src.values()[seg.range()]);
        }
    }
    ParamVector::from_values(b.build(), values).expect("segment lengths add up")
}

/// Rebuilds a model around a policy-only checkpoint; the dynamics stay zero.
pub fn policy_model(cfg: &RunConfig, params: &ParamVector) -> Result<WorldModel> {
    let mut m = WorldModel::zeros(cfg.model_shape())?;
    load_components(&mut m, params, &[Component::Representation, Component::Prediction])?;
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct BcOutcome {
    pub model: WorldModel,
    pub losses: Vec<f64>,
    pub aborted: Option<String>,
}

/// Behavioral cloning of the logged actions through `h` then `f`, with equal
/// per-task shares drawn epoch-wise, for `pretrain.bc_steps` steps.
pub fn bc_baseline(cfg: &RunConfig, datasets: &[&Dataset]) -> Result<BcOutcome> {
    cfg.validate()?;
    check_datasets(cfg, datasets)?;
    let seed = cfg.run.seed;
    let stack = cfg.env.stack;
    let steps = cfg.pretrain.bc_steps;
    let model = WorldModel::random(cfg.model_shape(), &mut stream_rng(seed, Stream::Init))?;
    let mut trainer = Trainer::new(model, cfg.optim.clone(), steps, &[Component::Dynamics]);
    let buffers = datasets
        .iter()
        .map(|d| ReplayBuffer::from_trajectories(&d.task_id, &d.trajectories))
        .collect::<Result<Vec<_>>>()?;
    let mut samplers: Vec<EpochSampler> = buffers.iter().map(|b| EpochSampler::new(b.transitions())).collect();
    let mut rng = stream_rng(seed, Stream::Offline);
    let batch = cfg.pretrain.batch_size;
    let mut losses = Vec::with_capacity(steps);
    let mut aborted = None;
    for _ in 0..steps {
        let shares = rotated_shares(batch, buffers.len(), trainer.step());
        let mut rows = Vec::with_capacity(batch);
        let mut actions = Vec::with_capacity(batch);
        for (i, buf) in buffers.iter().enumerate() {
            for idx in samplers[i].next_batch(shares[i], &mut rng) {
                let (ti, t) = buf.locate(idx)?;
                let traj = buf.trajectory(ti);
                rows.push(traj.observation(t, stack));
                actions.push(traj.actions[t]);
            }
        }
        let result = bc_loss(&trainer.model, &Matrix::from_rows(&rows)?, &actions)
            .and_then(|(l, g)| trainer.apply(g, None).map(|_| l));
        match result {
            Ok(l) => losses.push(l),
            Err(Error::Numeric(msg)) => {
                aborted = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(BcOutcome {
        model: trainer.into_model(),
        losses,
        aborted,
    })
}

/// Zero-shot evaluation of a policy network: greedy on the predicted policy,
/// no search, one episode per seed.
pub fn evaluate_policy(model: &WorldModel, spec: &EnvSpec, seeds: &[u64]) -> Result<EvalSummary> {
    if seeds.is_empty() {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let (mut env, mut obs) = Env::reset(spec, &mut ChaCha8Rng::seed_from_u64(s))?;
        let mut ret = 0.0;
        loop {
            let (_, pred) = model.initial_inference(&obs)?;
            let action = argmax(&pred.policy);
            let out = env.step(action)?;
            ret += out.reward;
            obs = out.obs;
            if out.terminal {
                break;
            }
        }
        returns.push(ret);
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(EvalSummary { mean_return, returns })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{stack_frames, ACTION_COUNT};

    fn tiny_cfg() -> RunConfig {
        let mut c = RunConfig::desk();
        c.env.grid = 4;
        c.model.latent_dim = 6;
        c.model.hidden_dim = 12;
        c.search.simulations = 4;
        c.pretrain.batch_size = 8;
        c.loss.unroll_steps = 2;
        c.targets.td_steps = 2;
        c
    }

    fn random_dataset(cfg: &RunConfig, variant: u64, episodes: usize, seed: u64) -> Dataset {
        let spec = cfg.env.resolve(&EnvSpec::maze(variant));
        let model = WorldModel::random(cfg.model_shape(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        collect_offline_dataset(
            &spec,
            &[model],
            episodes,
            &cfg.search_config(),
            &mut ChaCha8Rng::seed_from_u64(seed + 1),
        )
        .unwrap()
    }

    #[test]
    fn collection_counts_and_empty_checkpoints() {
        let cfg = tiny_cfg();
        let ds = random_dataset(&cfg, 1, 3, 0);
        assert_eq!(ds.trajectories.len(), 3);
        ds.validate().unwrap();
        let spec = cfg.env.resolve(&EnvSpec::maze(1));
        let err = collect_offline_dataset(&spec, &[], 3, &cfg.search_config(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn zero_budget_teacher_is_the_initialization() {
        let mut cfg = tiny_cfg();
        cfg.pretrain.teacher_steps = 0;
        let ds = random_dataset(&cfg, 1, 2, 3);
        let run = train_teacher(&cfg, &ds).unwrap();
        let init = WorldModel::random(cfg.model_shape(), &mut stream_rng(cfg.run.seed, Stream::Init)).unwrap();
        assert_eq!(run.model.params(), init.params());
        assert!(run.losses.is_empty());
    }

    #[test]
    fn single_task_multigame_is_the_teacher() {
        let mut cfg = tiny_cfg();
        cfg.pretrain.teacher_steps = 6;
        cfg.pretrain.multigame_steps = 6;
        let ds = random_dataset(&cfg, 2, 3, 5);
        let a = train_teacher(&cfg, &ds).unwrap();
        let b = multigame_offline_rl(&cfg, &[&ds]).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn distillation_shares_and_frozen_teachers() {
        let mut cfg = tiny_cfg();
        cfg.pretrain.distill_steps = 7;
        cfg.pretrain.batch_size = 9;
        let d1 = random_dataset(&cfg, 1, 3, 10);
        let d2 = random_dataset(&cfg, 2, 3, 20);
        let t1 = WorldModel::random(cfg.model_shape(), &mut ChaCha8Rng::seed_from_u64(30)).unwrap();
        let t2 = WorldModel::random(cfg.model_shape(), &mut ChaCha8Rng::seed_from_u64(31)).unwrap();
        let (c1, c2) = (t1.clone(), t2.clone());
        let out = distill_student(&cfg, &[&t1, &t2], &[&d1, &d2]).unwrap();
        assert_eq!(t1.params(), c1.params());
        assert_eq!(t2.params(), c2.params());
        // Shares of 5/4 rotate, so after 7 steps: 4 steps at 5 plus 3 at 4, and the reverse.
        assert_eq!(out.task_samples, vec![4 * 5 + 3 * 4, 3 * 5 + 4 * 4]);
        let even = distill_student(&tiny_cfg(), &[&t1, &t2], &[&d1, &d2]);
        assert!(even.is_ok());
        assert_eq!(out.heldout_kl.len(), 2);
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let cfg = tiny_cfg();
        let d = random_dataset(&cfg, 1, 2, 1);
        let mut other = tiny_cfg();
        other.model.hidden_dim = 7;
        let t = WorldModel::random(other.model_shape(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(distill_student(&cfg, &[&t], &[&d]), Err(Error::Config(_))));
    }

    #[test]
    fn kl_of_identical_models_is_zero() {
        let cfg = tiny_cfg();
        let d = random_dataset(&cfg, 1, 2, 4);
        let m = WorldModel::random(cfg.model_shape(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(heldout_kl(&m, &m, &d.trajectories, cfg.env.stack).unwrap(), 0.0);
        let other = WorldModel::random(cfg.model_shape(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(heldout_kl(&m, &other, &d.trajectories, cfg.env.stack).unwrap() > 0.0);
    }

    #[test]
    fn heldout_split_keeps_a_training_trajectory() {
        let cfg = tiny_cfg();
        let d = random_dataset(&cfg, 1, 8, 2);
        let (a, b) = split_heldout(&d.trajectories, 0.25);
        assert_eq!((a.len(), b.len()), (6, 2));
        assert_eq!(b[0], d.trajectories[6]);
        let (a, b) = split_heldout(&d.trajectories[..1], 0.9);
        assert_eq!((a.len(), b.len()), (1, 0));
    }

    #[test]
    fn bc_fits_a_single_repeated_action() {
        let mut cfg = tiny_cfg();
        cfg.pretrain.bc_steps = 150;
        cfg.pretrain.batch_size = 16;
        let spec = cfg.env.resolve(&EnvSpec::maze(1));
        let mut ds = random_dataset(&cfg, 1, 4, 6);
        for t in &mut ds.trajectories {
            t.actions.iter_mut().for_each(|a| *a = 3);
        }
        let out = bc_baseline(&cfg, &[&ds]).unwrap();
        assert!(out.losses.last().unwrap() < &out.losses[0]);
        let traj = &ds.trajectories[0];
        let obs = stack_frames(&traj.observations, traj.frame_dim, 0, cfg.env.stack);
        let (_, pred) = out.model.initial_inference(&obs).unwrap();
        assert!(pred.policy[3] >= 0.99, "{:?}", pred.policy);

        let p = policy_params(&out.model);
        assert!(p.layout().segments().iter().all(|s| !s.name().starts_with("dyn.")));
        let rebuilt = policy_model(&cfg, &p).unwrap();
        let (_, again) = rebuilt.initial_inference(&obs).unwrap();
        assert_eq!(again.policy, pred.policy);
        let s = evaluate_policy(&rebuilt, &spec, &[1, 2]).unwrap();
        assert_eq!(s.returns.len(), 2);
        assert_eq!(ACTION_COUNT, 5);
    }
}
