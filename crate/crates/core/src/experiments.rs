//! Canned studies: similar-family transfer, task-relevance contrast,
//! component-transfer ablation, the batch-size control and the
//! distillation comparison.
//!
//! A [`Lab`] owns the shared pipeline (datasets, teachers, students and
//! finetuning runs) and caches every artifact in memory and, when given a
//! directory, on disk, so studies that share cells reuse them.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::finetune::{finetune_loop, FinetuneOptions, OfflineTask};
use crate::metrics::{read_metrics, write_metrics, MetricsRecord};
use crate::model::{format_components, Component, WorldModel};
use crate::nn::{load_params, save_params};
use crate::pretrain::{
    collect_offline_dataset, distill_student, generator_checkpoints, heldout_kl, multigame_offline_rl, split_heldout, train_teacher,
};
use crate::selfplay::evaluate_with_seeds;
use crate::replay::{load_dataset, save_dataset, Dataset, ReplayBuffer};
use crate::seeding::{stream_rng, Stream};
use crate::targets::TeacherCache;

/// Mean and normal-approximation 95% half-width; the half-width is 0 for a
/// single value.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Evaluation curve aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub env_steps: Vec<usize>,
    pub mean: Vec<f64>,
    pub ci: Vec<f64>,
    pub seeds: usize,
}

impl Curve {
    /// Aggregates per-seed `(env_steps, return)` series sharing one schedule.
    pub fn aggregate(runs: &[Vec<(usize, f64)>]) -> Result<Curve> {
        let first = runs.first().ok_or_else(|| Error::Argument("no runs to aggregate".into()))?;
        let env_steps: Vec<usize> = first.iter().map(|p| p.0).collect();
        let (mut mean, mut ci) = (Vec::new(), Vec::new());
        for (i, &s) in env_steps.iter().enumerate() {
            let mut vals = Vec::with_capacity(runs.len());
            for r in runs {
                match r.get(i) {
                    Some(&(e, v)) if e == s => vals.push(v),
                    _ => return Err(Error::Validation(format!("runs disagree on the evaluation schedule at {s}"))),
                }
            }
            let (m, c) = mean_ci(&vals);
            mean.push(m);
            ci.push(c);
        }
        Ok(Curve {
            env_steps,
            mean,
            ci,
            seeds: runs.len(),
        })
    }

    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_ci(&self) -> f64 {
        self.ci.last().copied().unwrap_or(0.0)
    }

    /// First evaluated env step whose mean reaches `level`.
    pub fn steps_to_reach(&self, level: f64) -> Option<usize> {
        self.env_steps
            .iter()
            .zip(&self.mean)
            .find(|(_, &m)| m >= level)
            .map(|(&s, _)| s)
    }
}

/// One finetuning run as seen by the studies.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub records: Vec<MetricsRecord>,
}

impl RunRecord {
    pub fn evals(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                MetricsRecord::Eval {
                    env_steps, mean_return, ..
                } => Some((*env_steps, *mean_return)),
                _ => None,
            })
            .collect()
    }

    /// Task weights logged at the last training step.
    pub fn final_eta(&self) -> Vec<f64> {
        self.records
            .iter()
            .rev()
            .find_map(|r| match r {
                MetricsRecord::Train { eta, .. } => Some(eta.clone()),
                _ => None,
            })
            .unwrap_or_default()
    }
}

/// How the finetuning model is initialized and what it trains alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    /// Offline tasks providing the student and the concurrent losses; empty
    /// for the scratch baseline.
    pub pretrain: Vec<EnvSpec>,
    pub cross_task: bool,
    pub load_pretrained: bool,
    pub dynamic_weights: bool,
    pub load_components: Vec<Component>,
    /// Target-task batch multiplier.
    pub batch_scale: usize,
}

impl Arm {
    pub fn scratch() -> Self {
        Self {
            pretrain: Vec::new(),
            cross_task: false,
            load_pretrained: false,
            dynamic_weights: false,
            load_components: Component::ALL.to_vec(),
            batch_scale: 1,
        }
    }

    pub fn xtra(pretrain: &[EnvSpec]) -> Self {
        Self {
            pretrain: pretrain.to_vec(),
            cross_task: true,
            load_pretrained: true,
            dynamic_weights: true,
            load_components: Component::ALL.to_vec(),
            batch_scale: 1,
        }
    }

    /// Pretrained initialization of the given components, no cross-task loss.
    pub fn components(pretrain: &[EnvSpec], subset: &[Component]) -> Self {
        Self {
            pretrain: pretrain.to_vec(),
            cross_task: false,
            load_pretrained: true,
            dynamic_weights: false,
            load_components: subset.to_vec(),
            batch_scale: 1,
        }
    }

    /// Finetuning config for this arm on `target` with `seed`.
    pub fn config(&self, base: &RunConfig, target: &EnvSpec, seed: u64) -> RunConfig {
        let mut c = base.clone();
        c.run.seed = seed;
        c.finetune.target = target.clone();
        c.finetune.cross_task = self.cross_task;
        c.finetune.load_pretrained = self.load_pretrained;
        c.finetune.dynamic_weights = self.dynamic_weights;
        c.finetune.load_components = self.load_components.clone();
        c.finetune.target_batch = base.finetune.target_batch * self.batch_scale;
        c
    }

    fn key(&self) -> String {
        let tasks: Vec<String> = self.pretrain.iter().map(EnvSpec::file_stem).collect();
        format!(
            "{}_{}{}{}_{}_x{}",
            if tasks.is_empty() { "none".to_string() } else { tasks.join("+") },
            u8::from(self.cross_task),
            u8::from(self.load_pretrained),
            u8::from(self.dynamic_weights),
            if self.load_components.is_empty() {
                "-".to_string()
            } else {
                format_components(&self.load_components).replace(',', "")
            },
            self.batch_scale
        )
    }
}

/// Shared pipeline with artifact caching.
/// Multi-task model trained offline on several datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OfflineKind {
    /// Distilled from per-task teachers.
    Student,
    /// Offline RL on the pooled datasets with Reanalyze targets.
    Multigame,
}

pub struct Lab {
    base: RunConfig,
    dir: Option<PathBuf>,
    verbose: bool,
    datasets: HashMap<EnvSpec, Dataset>,
    teachers: HashMap<EnvSpec, WorldModel>,
    students: HashMap<(Vec<EnvSpec>, OfflineKind, u64), WorldModel>,
    runs: HashMap<String, RunRecord>,
}

fn fingerprint(text: &str) -> String {
    format!("{:08x}", crc32fast::hash(text.as_bytes()))
}

impl Lab {
    /// `dir` caches artifacts across processes; entries live under a
    /// fingerprint of the offline-stage settings, so changing them never
    /// reuses stale files.
    pub fn new(base: RunConfig, dir: Option<&Path>) -> Result<Self> {
        base.validate()?;
        let dir = match dir {
            Some(d) => {
                let offline: String = base
                    .to_doc()
                    .entries()
                    .iter()
                    .filter(|(k, _)| !k.starts_with("finetune.") && !k.starts_with("eval.") && !k.starts_with("paths."))
                    .map(|(k, v)| format!("{k}={v}\n"))
                    .collect();
                let p = d.join(fingerprint(&offline));
                for sub in ["datasets", "teachers", "students", "runs"] {
                    fs::create_dir_all(p.join(sub)).map_err(|e| Error::io(p.join(sub), e))?;
                }
                base.save(&p.join("lab.cfg"))?;
                Some(p)
            }
            None => None,
        };
        Ok(Self {
            base,
            dir,
            verbose: false,
            datasets: HashMap::new(),
            teachers: HashMap::new(),
            students: HashMap::new(),
            runs: HashMap::new(),
        })
    }

    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn base(&self) -> &RunConfig {
        &self.base
    }

    fn note(&self, msg: &str) {
        if self.verbose {
            eprintln!("[lab] {msg}");
        }
    }

    fn path(&self, sub: &str, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(sub).join(name))
    }

    fn resolve(&self, spec: &EnvSpec) -> EnvSpec {
        self.base.env.resolve(spec)
    }

    /// Offline dataset for one task, generated from a scratch agent's
    /// checkpoints when not cached.
    pub fn dataset(&mut self, spec: &EnvSpec) -> Result<&Dataset> {
        let spec = self.resolve(spec);
        if !self.datasets.contains_key(&spec) {
            let path = self.path("datasets", &format!("{}.xtrj", spec.file_stem()));
            let ds = match &path {
                Some(p) if p.exists() => load_dataset(p)?,
                _ => {
                    self.note(&format!("collecting {}", spec.task_id()));
                    let ckpts = generator_checkpoints(&self.base, &spec)?;
                    let mut rng = stream_rng(self.base.run.seed, Stream::Collect);
                    let ds = collect_offline_dataset(
                        &spec,
                        &ckpts,
                        self.base.collect.episodes_per_ckpt,
                        &self.base.search_config(),
                        &mut rng,
                    )?;
                    if let Some(p) = &path {
                        save_dataset(&ds, p)?;
                    }
                    ds
                }
            };
            self.datasets.insert(spec.clone(), ds);
        }
        Ok(&self.datasets[&spec])
    }

    pub fn teacher(&mut self, spec: &EnvSpec) -> Result<&WorldModel> {
        let spec = self.resolve(spec);
        if !self.teachers.contains_key(&spec) {
            let path = self.path("teachers", &format!("{}.ckpt", spec.file_stem()));
            let model = match &path {
                Some(p) if p.exists() => WorldModel::from_params(self.base.model_shape(), load_params(p)?)?,
                _ => {
                    let ds = self.dataset(&spec)?.clone();
                    self.note(&format!("training teacher {}", spec.task_id()));
                    let run = train_teacher(&self.base, &ds)?;
                    if let Some(m) = run.aborted {
                        return Err(Error::Numeric(format!("teacher {}: {m}", spec.task_id())));
                    }
                    if let Some(p) = &path {
                        save_params(run.model.params(), p)?;
                    }
                    run.model
                }
            };
            self.teachers.insert(spec.clone(), model);
        }
        Ok(&self.teachers[&spec])
    }

    /// Student distilled from the teachers of `tasks`.
    pub fn student(&mut self, tasks: &[EnvSpec]) -> Result<&WorldModel> {
        let seed = self.base.run.seed;
        self.offline_model(tasks, OfflineKind::Student, seed)
    }

    /// Student or multi-game baseline trained with `run.seed = seed`; the
    /// teachers and datasets stay those of the base seed.
    pub fn offline_model(&mut self, tasks: &[EnvSpec], kind: OfflineKind, seed: u64) -> Result<&WorldModel> {
        let specs: Vec<EnvSpec> = tasks.iter().map(|t| self.resolve(t)).collect();
        let key = (specs.clone(), kind, seed);
        if !self.students.contains_key(&key) {
            let stems: Vec<String> = specs.iter().map(EnvSpec::file_stem).collect();
            let mut name = stems.join("+");
            if kind == OfflineKind::Multigame {
                name.push_str("_multigame");
            }
            if seed != self.base.run.seed {
                name.push_str(&format!("_s{seed}"));
            }
            let path = self.path("students", &format!("{name}.ckpt"));
            let model = match &path {
                Some(p) if p.exists() => WorldModel::from_params(self.base.model_shape(), load_params(p)?)?,
                _ => {
                    let mut teachers = Vec::new();
                    let mut datasets = Vec::new();
                    for t in &specs {
                        if kind == OfflineKind::Student {
                            teachers.push(self.teacher(t)?.clone());
                        }
                        datasets.push(self.dataset(t)?.clone());
                    }
                    let mut cfg = self.base.clone();
                    cfg.run.seed = seed;
                    let ds: Vec<&Dataset> = datasets.iter().collect();
                    let (model, aborted) = match kind {
                        OfflineKind::Student => {
                            self.note(&format!("distilling {name}"));
                            let out = distill_student(&cfg, &teachers.iter().collect::<Vec<_>>(), &ds)?;
                            (out.model, out.aborted)
                        }
                        OfflineKind::Multigame => {
                            self.note(&format!("training {name}"));
                            let out = multigame_offline_rl(&cfg, &ds)?;
                            (out.model, out.aborted)
                        }
                    };
                    if let Some(m) = aborted {
                        return Err(Error::Numeric(format!("{name}: {m}")));
                    }
                    if let Some(p) = &path {
                        save_params(model.params(), p)?;
                    }
                    model
                }
            };
            self.students.insert(key.clone(), model);
        }
        Ok(&self.students[&key])
    }

    /// Offline tasks with teacher targets over the full datasets.
    pub fn offline_tasks(&mut self, tasks: &[EnvSpec]) -> Result<Vec<OfflineTask>> {
        let mut out = Vec::new();
        for t in tasks {
            let spec = self.resolve(t);
            let ds = self.dataset(&spec)?.clone();
            let teacher = self.teacher(&spec)?.clone();
            let cache = TeacherCache::build(
                &teacher,
                &ds.trajectories,
                self.base.targets.td_steps,
                self.base.targets.discount,
                self.base.env.stack,
            )?;
            out.push(OfflineTask {
                spec,
                buffer: ReplayBuffer::from_trajectories(&ds.task_id, &ds.trajectories)?,
                teacher: cache,
            });
        }
        Ok(out)
    }

    /// One finetuning run of `arm` on `target`.
    pub fn run(&mut self, target: &EnvSpec, arm: &Arm, seed: u64) -> Result<RunRecord> {
        let cfg = arm.config(&self.base, target, seed);
        let tag = format!("{}_{}_s{seed}", self.resolve(target).file_stem(), arm.key());
        let key = format!("{tag}_{}", fingerprint(&cfg.to_doc().to_string()));
        if let Some(r) = self.runs.get(&key) {
            return Ok(r.clone());
        }
        let path = self.path("runs", &format!("{key}.jsonl"));
        let record = match &path {
            Some(p) if p.exists() => RunRecord {
                records: read_metrics(p)?,
            },
            _ => {
                let pretrained = if arm.load_pretrained && !arm.load_components.is_empty() {
                    Some(self.student(&arm.pretrain)?.params().clone())
                } else if arm.load_pretrained {
                    Some(WorldModel::zeros(self.base.model_shape())?.params().clone())
                } else {
                    None
                };
                let offline = if arm.cross_task {
                    self.offline_tasks(&arm.pretrain)?
                } else {
                    Vec::new()
                };
                self.note(&format!("finetuning {tag}"));
                let out = finetune_loop(&cfg, pretrained.as_ref(), &offline, &FinetuneOptions::default())?;
                if let Some(m) = out.aborted {
                    return Err(Error::Numeric(format!("finetuning {tag}: {m}")));
                }
                let r = RunRecord { records: out.records };
                if let Some(p) = &path {
                    write_metrics(p, &r.records)?;
                }
                r
            }
        };
        self.runs.insert(key, record.clone());
        Ok(record)
    }

    /// Runs every seed and aggregates the evaluation curves.
    pub fn curve(&mut self, target: &EnvSpec, arm: &Arm, seeds: &[u64]) -> Result<(Curve, Vec<RunRecord>)> {
        let runs = seeds
            .iter()
            .map(|&s| self.run(target, arm, s))
            .collect::<Result<Vec<_>>>()?;
        let curve = Curve::aggregate(&runs.iter().map(RunRecord::evals).collect::<Vec<_>>())?;
        Ok((curve, runs))
    }
}

/// Every task of `pool` except `target`.
pub fn others(pool: &[EnvSpec], target: &EnvSpec) -> Vec<EnvSpec> {
    pool.iter().filter(|t| *t != target).cloned().collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferCell {
    pub target: String,
    pub pretrain: Vec<String>,
    pub scratch: Curve,
    pub xtra: Curve,
    /// Budget-end XTRA return over scratch, both shifted to the task's
    /// minimum possible return.
    pub improvement_ratio: f64,
    /// Share of the budget XTRA needs to reach scratch's budget-end mean.
    pub reach_fraction: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimilarTransferReport {
    pub cells: Vec<TransferCell>,
    pub mean_improvement_ratio: f64,
    /// Variants where XTRA reaches scratch's budget-end return within the
    /// given share of the budget.
    pub fast_variants: usize,
    pub fast_threshold: f64,
    pub config: String,
}

fn shifted_ratio(spec: &EnvSpec, a: f64, b: f64) -> f64 {
    let lo = spec.return_bounds().0;
    (a - lo) / (b - lo)
}

/// For each target variant: pretrain on the rest of `pool`, finetune with
/// XTRA and compare against scratch.
pub fn exp_similar_transfer(
    lab: &mut Lab,
    pool: &[EnvSpec],
    targets: &[EnvSpec],
    seeds: &[u64],
    fast_threshold: f64,
) -> Result<SimilarTransferReport> {
    let budget = lab.base().finetune.env_steps as f64;
    let mut cells = Vec::new();
    for target in targets {
        let pretrain = others(pool, target);
        let (scratch, _) = lab.curve(target, &Arm::scratch(), seeds)?;
        let (xtra, _) = lab.curve(target, &Arm::xtra(&pretrain), seeds)?;
        let spec = lab.resolve(target);
        cells.push(TransferCell {
            target: spec.task_id(),
            pretrain: pretrain.iter().map(EnvSpec::task_id).collect(),
            improvement_ratio: shifted_ratio(&spec, xtra.final_mean(), scratch.final_mean()),
            reach_fraction: xtra.steps_to_reach(scratch.final_mean()).map(|s| s as f64 / budget),
            scratch,
            xtra,
        });
    }
    let fast_variants = cells
        .iter()
        .filter(|c| c.reach_fraction.is_some_and(|f| f <= fast_threshold))
        .count();
    let mean_improvement_ratio = cells.iter().map(|c| c.improvement_ratio).sum::<f64>() / cells.len().max(1) as f64;
    Ok(SimilarTransferReport {
        cells,
        mean_improvement_ratio,
        fast_variants,
        fast_threshold,
        config: lab.base().to_doc().to_string(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RelevanceCell {
    pub target: String,
    pub same_family: Curve,
    pub cross_family: Curve,
    pub scratch: Curve,
    /// Budget-end cross-family mean over scratch mean.
    pub cross_over_scratch: f64,
    /// Per seed, the final task weights of the cross-family run.
    pub cross_final_eta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RelevanceReport {
    pub cells: Vec<RelevanceCell>,
    /// Median over targets, seeds and tasks of the irrelevant tasks' final weight.
    pub median_irrelevant_eta: f64,
    pub config: String,
}

/// Same-family versus cross-family pretraining versus scratch.
pub fn exp_relevance_contrast(
    lab: &mut Lab,
    targets: &[EnvSpec],
    same_family: &[EnvSpec],
    cross_family: &[EnvSpec],
    seeds: &[u64],
) -> Result<RelevanceReport> {
    let mut cells = Vec::new();
    let mut etas = Vec::new();
    for target in targets {
        let (scratch, _) = lab.curve(target, &Arm::scratch(), seeds)?;
        let (same, _) = lab.curve(target, &Arm::xtra(&others(same_family, target)), seeds)?;
        let (cross, runs) = lab.curve(target, &Arm::xtra(cross_family), seeds)?;
        let finals: Vec<Vec<f64>> = runs.iter().map(RunRecord::final_eta).collect();
        etas.extend(finals.iter().flatten().copied());
        cells.push(RelevanceCell {
            target: lab.resolve(target).task_id(),
            cross_over_scratch: cross.final_mean() / scratch.final_mean(),
            same_family: same,
            cross_family: cross,
            scratch,
            cross_final_eta: finals,
        });
    }
    Ok(RelevanceReport {
        cells,
        median_irrelevant_eta: median(&etas),
        config: lab.base().to_doc().to_string(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentCell {
    /// Loaded components, `-` for none.
    pub components: String,
    pub curve: Curve,
    /// Per-seed budget-end returns.
    pub finals: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentsReport {
    pub target: String,
    pub cells: Vec<ComponentCell>,
    /// Whether loading nothing reproduced the scratch records exactly.
    pub empty_matches_scratch: bool,
    /// Share of the nothing-to-everything gain captured by loading `h` and `g`.
    pub hg_gain_share: f64,
    pub config: String,
}

/// Finetunes with pretrained `∅`, `{h}`, `{h,g}` and `{h,g,f}`.
pub fn exp_components(lab: &mut Lab, target: &EnvSpec, pretrain: &[EnvSpec], seeds: &[u64]) -> Result<ComponentsReport> {
    use Component::*;
    let subsets: [&[Component]; 4] = [&[], &[Representation], &[Representation, Dynamics], &Component::ALL];
    let mut cells = Vec::new();
    let mut empty_matches_scratch = true;
    for subset in subsets {
        let (curve, runs) = lab.curve(target, &Arm::components(pretrain, subset), seeds)?;
        if subset.is_empty() {
            for &s in seeds {
                let scratch = lab.run(target, &Arm::scratch(), s)?;
                let empty = lab.run(target, &Arm::components(pretrain, subset), s)?;
                empty_matches_scratch &= scratch == empty;
            }
        }
        cells.push(ComponentCell {
            components: if subset.is_empty() {
                "-".into()
            } else {
                format_components(subset)
            },
            finals: runs.iter().map(|r| r.evals().last().map_or(f64::NAN, |e| e.1)).collect(),
            curve,
        });
    }
    let m = |i: usize| median(&cells[i].finals);
    let full_gain = m(3) - m(0);
    let hg_gain_share = if full_gain.abs() < 1e-12 { f64::NAN } else { (m(2) - m(0)) / full_gain };
    Ok(ComponentsReport {
        target: lab.resolve(target).task_id(),
        cells,
        empty_matches_scratch,
        hg_gain_share,
        config: lab.base().to_doc().to_string(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchControlReport {
    pub target: String,
    pub standard: Curve,
    pub doubled: Curve,
    /// Budget-end means differ by no more than the summed CI half-widths.
    pub overlap: bool,
    pub config: String,
}

/// Scratch with the standard target batch against scratch with twice it.
pub fn exp_batch_control(lab: &mut Lab, target: &EnvSpec, seeds: &[u64]) -> Result<BatchControlReport> {
    let (standard, _) = lab.curve(target, &Arm::scratch(), seeds)?;
    let doubled_arm = Arm {
        batch_scale: 2,
        ..Arm::scratch()
    };
    let (doubled, _) = lab.curve(target, &doubled_arm, seeds)?;
    let overlap = (standard.final_mean() - doubled.final_mean()).abs() <= standard.final_ci() + doubled.final_ci();
    Ok(BatchControlReport {
        target: lab.resolve(target).task_id(),
        standard,
        doubled,
        overlap,
        config: lab.base().to_doc().to_string(),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DistillationCell {
    pub task: String,
    /// Per seed, held-out `KL(teacher ‖ student)`.
    pub heldout_kl: Vec<f64>,
    pub teacher_return: f64,
    /// Per seed, mean evaluation return.
    pub student_returns: Vec<f64>,
    pub multigame_returns: Vec<f64>,
    pub student_median: f64,
    pub multigame_median: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistillationReport {
    pub cells: Vec<DistillationCell>,
    /// Largest per-task KL averaged over seeds.
    pub max_mean_kl: f64,
    /// Tasks where the student's median return beats the multi-game median.
    pub student_wins: usize,
    pub config: String,
}

/// Distilled student against the multi-game offline RL baseline, both
/// trained once per seed on the same datasets.
pub fn exp_distillation(lab: &mut Lab, tasks: &[EnvSpec], seeds: &[u64]) -> Result<DistillationReport> {
    let specs: Vec<EnvSpec> = tasks.iter().map(|t| lab.resolve(t)).collect();
    let base = lab.base().clone();
    let search = base.search_config();
    let eval_seeds: Vec<u64> = {
        let mut rng = stream_rng(base.run.seed, Stream::Eval);
        (0..base.eval.episodes).map(|_| rand::Rng::random(&mut rng)).collect()
    };
    let mut kl = vec![Vec::new(); specs.len()];
    let mut student_returns = vec![Vec::new(); specs.len()];
    let mut multigame_returns = vec![Vec::new(); specs.len()];
    for &seed in seeds {
        let student = lab.offline_model(&specs, OfflineKind::Student, seed)?.clone();
        let multigame = lab.offline_model(&specs, OfflineKind::Multigame, seed)?.clone();
        for (i, spec) in specs.iter().enumerate() {
            let (_, held) = split_heldout(&lab.dataset(spec)?.trajectories, base.pretrain.heldout_fraction);
            let teacher = lab.teacher(spec)?;
            kl[i].push(heldout_kl(teacher, &student, &held, base.env.stack)?);
            student_returns[i].push(evaluate_with_seeds(&student, spec, &search, &eval_seeds)?.mean_return);
            multigame_returns[i].push(evaluate_with_seeds(&multigame, spec, &search, &eval_seeds)?.mean_return);
        }
    }
    let mut cells = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let teacher = lab.teacher(spec)?.clone();
        cells.push(DistillationCell {
            task: spec.task_id(),
            teacher_return: evaluate_with_seeds(&teacher, spec, &search, &eval_seeds)?.mean_return,
            student_median: median(&student_returns[i]),
            multigame_median: median(&multigame_returns[i]),
            heldout_kl: kl[i].clone(),
            student_returns: student_returns[i].clone(),
            multigame_returns: multigame_returns[i].clone(),
        });
    }
    Ok(DistillationReport {
        max_mean_kl: cells
            .iter()
            .map(|c| c.heldout_kl.iter().sum::<f64>() / c.heldout_kl.len().max(1) as f64)
            .fold(0.0, f64::max),
        student_wins: cells.iter().filter(|c| c.student_median > c.multigame_median).count(),
        cells,
        config: base.to_doc().to_string(),
    })
}
