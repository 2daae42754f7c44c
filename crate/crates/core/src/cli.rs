//! Command implementations behind the `xtra` binary: config resolution,
//! run directories, manifests and plot emission.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{Preset, RunConfig};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::experiments::{
    exp_batch_control, exp_components, exp_distillation, exp_relevance_contrast, exp_similar_transfer, others, Curve, Lab, RunRecord,
};
use crate::finetune::{finetune_loop, FinetuneOptions, OfflineTask};
use crate::kv::KvDoc;
use crate::metrics::{read_metrics, write_metrics, MetricsRecord};
use crate::model::{Component, WorldModel};
use crate::nn::{load_params, save_params, ParamVector};
use crate::pretrain::{
    bc_baseline, collect_offline_dataset, distill_student, evaluate_policy, generator_checkpoints, multigame_offline_rl,
    policy_model, policy_params, train_teacher,
};
use crate::replay::{load_dataset, save_dataset, Dataset, ReplayBuffer};
use crate::seeding::{stream_rng, Stream};
use crate::selfplay::{evaluate, EvalSummary};
use crate::targets::TeacherCache;

pub const SEED_ENV: &str = "XTRA_SEED";
pub const RESOLVED_CONFIG: &str = "resolved.cfg";
pub const MANIFEST: &str = "manifest.kv";
pub const METRICS: &str = "metrics.jsonl";

/// Process exit status for a failure: 2 configuration, 3 data, 4 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        Error::Format { .. } | Error::Io { .. } | Error::Validation(_) | Error::Unavailable(_) => 3,
        Error::Numeric(_) => 4,
    }
}

/// Base config from a file or preset, then `key=value` overrides, then the
/// seed override.
pub fn resolve_config(file: Option<&Path>, preset: Option<Preset>, sets: &[String], seed_env: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match (file, preset) {
        (Some(_), Some(_)) => return Err(Error::Argument("give either a config file or a preset, not both".into())),
        (Some(f), None) => RunConfig::load(f)?,
        (None, p) => RunConfig::preset(p.unwrap_or(Preset::Desk)),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("override {s:?} is not key=value")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(seed) = seed_env {
        cfg.run.seed = seed
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the run's resolved config next to its outputs.
pub fn freeze_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    cfg.save(&dir.join(RESOLVED_CONFIG))
}

fn attribute(task: &EnvSpec, e: Error) -> Error {
    let id = task.task_id();
    match e {
        Error::Config(m) => Error::Config(format!("{id}: {m}")),
        Error::Argument(m) => Error::Argument(format!("{id}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("{id}: {m}")),
        Error::Validation(m) => Error::Validation(format!("{id}: {m}")),
        Error::Unavailable(m) => Error::Unavailable(format!("{id}: {m}")),
        other => other,
    }
}

fn dataset_file(spec: &EnvSpec) -> String {
    format!("{}.xtrj", spec.file_stem())
}

fn load_manifest(dir: &Path) -> Result<KvDoc> {
    let p = dir.join(MANIFEST);
    if !p.exists() {
        return Err(Error::Unavailable(format!("{} has no {MANIFEST}", dir.display())));
    }
    KvDoc::load(&p)
}

/// What `collect` wrote per task.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectSummary {
    pub tasks: Vec<(String, usize)>,
}

/// Writes one dataset per pretraining task plus a manifest. Without
/// `checkpoints`, each task's checkpoints come from a scratch generator run;
/// with them, every task is rolled out with the given models.
pub fn cmd_collect(cfg: &RunConfig, out: &Path, checkpoints: Option<&[PathBuf]>) -> Result<CollectSummary> {
    let tasks = cfg.pretrain_envs();
    if tasks.is_empty() {
        return Err(Error::Config("pretrain.tasks is empty".into()));
    }
    let given = match checkpoints {
        Some([]) => {
            return Err(Error::Argument(
                "the checkpoint list is empty; pass model files or omit --checkpoints to train generators".into(),
            ))
        }
        Some(paths) => {
            let mut models = Vec::new();
            for p in paths {
                if !p.exists() {
                    return Err(Error::Unavailable(format!(
                        "checkpoint {} does not exist; train one with `xtra finetune` or omit --checkpoints",
                        p.display()
                    )));
                }
                models.push(WorldModel::from_params(cfg.model_shape(), load_params(p)?)?);
            }
            Some(models)
        }
        None => None,
    };
    let mut datasets = Vec::new();
    for spec in &tasks {
        let models = match &given {
            Some(m) => m.clone(),
            None => generator_checkpoints(cfg, spec).map_err(|e| attribute(spec, e))?,
        };
        let mut rng = stream_rng(cfg.run.seed, Stream::Collect);
        let ds = collect_offline_dataset(spec, &models, cfg.collect.episodes_per_ckpt, &cfg.search_config(), &mut rng)
            .map_err(|e| attribute(spec, e))?;
        datasets.push((spec.clone(), ds));
    }
    freeze_config(cfg, out)?;
    let mut manifest = KvDoc::new();
    manifest.set("tasks", tasks.iter().map(EnvSpec::task_id).collect::<Vec<_>>().join(","));
    let mut summary = Vec::new();
    for (spec, ds) in &datasets {
        save_dataset(ds, &out.join(dataset_file(spec)))?;
        manifest.set(&format!("dataset.{}", spec.task_id()), dataset_file(spec));
        manifest.set(&format!("trajectories.{}", spec.task_id()), ds.trajectories.len());
        summary.push((spec.task_id(), ds.trajectories.len()));
    }
    manifest.save(&out.join(MANIFEST))?;
    Ok(CollectSummary { tasks: summary })
}

/// Loads the dataset `collect` wrote for `spec`.
pub fn load_task_dataset(data_dir: &Path, spec: &EnvSpec) -> Result<Dataset> {
    let manifest = load_manifest(data_dir)?;
    let file = manifest
        .get(&format!("dataset.{}", spec.task_id()))
        .ok_or_else(|| Error::Unavailable(format!("{} has no dataset for {}", data_dir.display(), spec.task_id())))?;
    let ds = load_dataset(&data_dir.join(file))?;
    if ds.task_id != spec.task_id() {
        return Err(Error::Validation(format!("{file} holds {}, expected {}", ds.task_id, spec.task_id())));
    }
    Ok(ds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Multigame,
    Bc,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multigame" => Ok(Baseline::Multigame),
            "bc" => Ok(Baseline::Bc),
            other => Err(Error::Argument(format!("unknown baseline {other:?} (multigame or bc)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSummary {
    /// Tasks whose teacher was trained in this invocation.
    pub trained: Vec<String>,
    /// Tasks whose teacher was found in the manifest and reused.
    pub reused: Vec<String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

fn save_checked(params: &ParamVector, path: &Path, aborted: Option<String>, what: &str) -> Result<()> {
    save_params(params, path)?;
    match aborted {
        Some(m) => Err(Error::Numeric(format!(
            "{what} diverged ({m}); last finite parameters saved to {}",
            path.display()
        ))),
        None => Ok(()),
    }
}

/// Teachers per task then the distilled student, or one of the baselines.
/// The manifest is updated after every teacher, so a rerun skips finished
/// ones.
pub fn cmd_pretrain(cfg: &RunConfig, data_dir: &Path, out: &Path, baseline: Option<Baseline>) -> Result<PretrainSummary> {
    let tasks = cfg.pretrain_envs();
    if tasks.is_empty() {
        return Err(Error::Config("pretrain.tasks is empty".into()));
    }
    let datasets = tasks
        .iter()
        .map(|t| load_task_dataset(data_dir, t).map_err(|e| attribute(t, e)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Dataset> = datasets.iter().collect();
    freeze_config(cfg, out)?;
    let mut summary = PretrainSummary {
        trained: Vec::new(),
        reused: Vec::new(),
        outputs: Vec::new(),
    };
    match baseline {
        Some(Baseline::Multigame) => {
            let run = multigame_offline_rl(cfg, &refs)?;
            save_checked(run.model.params(), &out.join("multigame.ckpt"), run.aborted, "multi-game training")?;
            summary.outputs.push("multigame.ckpt".into());
            return Ok(summary);
        }
        Some(Baseline::Bc) => {
            let run = bc_baseline(cfg, &refs)?;
            save_checked(&policy_params(&run.model), &out.join("bc_policy.ckpt"), run.aborted, "behavioral cloning")?;
            summary.outputs.push("bc_policy.ckpt".into());
            return Ok(summary);
        }
        None => {}
    }

    let manifest_path = out.join(MANIFEST);
    let mut manifest = if manifest_path.exists() {
        KvDoc::load(&manifest_path)?
    } else {
        KvDoc::new()
    };
    manifest.set("tasks", tasks.iter().map(EnvSpec::task_id).collect::<Vec<_>>().join(","));
    create_dir(&out.join("teachers"))?;
    let shape = cfg.model_shape();
    let mut teachers = Vec::new();
    for (spec, ds) in tasks.iter().zip(&datasets) {
        let key = format!("teacher.{}", spec.task_id());
        let file = format!("teachers/{}.ckpt", spec.file_stem());
        let done = manifest.get(&key) == Some(file.as_str()) && out.join(&file).exists();
        if done {
            teachers.push(WorldModel::from_params(shape, load_params(&out.join(&file))?)?);
            summary.reused.push(spec.task_id());
            continue;
        }
        let run = train_teacher(cfg, ds).map_err(|e| attribute(spec, e))?;
        save_checked(run.model.params(), &out.join(&file), run.aborted, &format!("teacher {}", spec.task_id()))?;
        manifest.set(&key, &file);
        manifest.save(&manifest_path)?;
        summary.trained.push(spec.task_id());
        summary.outputs.push(file);
        teachers.push(run.model);
    }
    let teacher_refs: Vec<&WorldModel> = teachers.iter().collect();
    let out_d = distill_student(cfg, &teacher_refs, &refs)?;
    save_checked(out_d.model.params(), &out.join("student.ckpt"), out_d.aborted, "distillation")?;
    manifest.set("student", "student.ckpt");
    for (spec, kl) in tasks.iter().zip(&out_d.heldout_kl) {
        manifest.set(&format!("heldout_kl.{}", spec.task_id()), kl);
    }
    manifest.save(&manifest_path)?;
    summary.outputs.push("student.ckpt".into());
    Ok(summary)
}

/// Offline tasks for concurrent learning: the `collect` datasets with
/// targets from the `pretrain` teachers.
pub fn load_offline_tasks(cfg: &RunConfig, data_dir: &Path, pretrained_dir: &Path) -> Result<Vec<OfflineTask>> {
    let manifest = load_manifest(pretrained_dir)?;
    let mut out = Vec::new();
    for spec in cfg.pretrain_envs() {
        let ds = load_task_dataset(data_dir, &spec).map_err(|e| attribute(&spec, e))?;
        let file = manifest.get(&format!("teacher.{}", spec.task_id())).ok_or_else(|| {
            Error::Unavailable(format!(
                "{} has no teacher for {}; run `xtra pretrain` first",
                pretrained_dir.display(),
                spec.task_id()
            ))
        })?;
        let teacher = WorldModel::from_params(cfg.model_shape(), load_params(&pretrained_dir.join(file))?)?;
        let cache = TeacherCache::build(
            &teacher,
            &ds.trajectories,
            cfg.targets.td_steps,
            cfg.targets.discount,
            cfg.env.stack,
        )?;
        out.push(OfflineTask {
            buffer: ReplayBuffer::from_trajectories(&ds.task_id, &ds.trajectories)?,
            spec,
            teacher: cache,
        });
    }
    Ok(out)
}

/// Ablation switches of the finetune command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ablations {
    pub no_cross_task: bool,
    pub no_pretraining: bool,
    pub no_task_weights: bool,
    pub freeze_repr: bool,
    pub load_components: Option<Vec<Component>>,
}

impl Ablations {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.no_cross_task {
            cfg.finetune.cross_task = false;
        }
        if self.no_pretraining {
            cfg.finetune.load_pretrained = false;
        }
        if self.no_task_weights {
            cfg.finetune.dynamic_weights = false;
        }
        if self.freeze_repr {
            cfg.finetune.freeze_repr = true;
        }
        if let Some(c) = &self.load_components {
            cfg.finetune.load_components = c.clone();
        }
    }
}

fn required_dir<'a>(value: &'a str, key: &str, why: &str) -> Result<&'a Path> {
    if value.is_empty() {
        return Err(Error::Config(format!("{key} must be set {why}")));
    }
    Ok(Path::new(value))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSummary {
    pub evals: Vec<(usize, f64)>,
    pub final_eta: Vec<f64>,
}

/// Online finetuning on `finetune.target`; writes the model, the metrics
/// and the resolved config into `out`.
pub fn cmd_finetune(cfg: &RunConfig, out: &Path) -> Result<FinetuneSummary> {
    let ft = &cfg.finetune;
    let pretrained = if ft.load_pretrained {
        let dir = required_dir(&cfg.paths.pretrained, "paths.pretrained", "to load a pretrained model")?;
        let manifest = load_manifest(dir)?;
        let file = manifest.get("student").ok_or_else(|| {
            Error::Unavailable(format!("{} has no student; run `xtra pretrain` first", dir.display()))
        })?;
        Some(load_params(&dir.join(file))?)
    } else {
        None
    };
    let offline = if ft.cross_task {
        let data = required_dir(&cfg.paths.data, "paths.data", "for cross-task learning")?;
        let pre = required_dir(&cfg.paths.pretrained, "paths.pretrained", "for cross-task learning")?;
        load_offline_tasks(cfg, data, pre)?
    } else {
        Vec::new()
    };
    freeze_config(cfg, out)?;
    let result = finetune_loop(cfg, pretrained.as_ref(), &offline, &FinetuneOptions::default())?;
    write_metrics(&out.join(METRICS), &result.records)?;
    save_checked(result.model.params(), &out.join("model.ckpt"), result.aborted, "finetuning")?;
    Ok(FinetuneSummary {
        evals: result.evals,
        final_eta: result.final_eta,
    })
}

/// Evaluates a checkpoint on `task` (default: the finetune target). A
/// policy-only checkpoint is played greedily on its predicted policy;
/// a full model plays with search.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, task: Option<&EnvSpec>) -> Result<EvalSummary> {
    let spec = task.map_or_else(|| cfg.target_env(), |t| cfg.env.resolve(t));
    let params = load_params(checkpoint)?;
    let has_dynamics = params
        .layout()
        .segments()
        .iter()
        .any(|s| s.name().starts_with(Component::Dynamics.prefix()));
    let mut rng = stream_rng(cfg.run.seed, Stream::Eval);
    if has_dynamics {
        let model = WorldModel::from_params(cfg.model_shape(), params)?;
        evaluate(&model, &spec, cfg.eval.episodes, &cfg.search_config(), &mut rng)
    } else {
        let model = policy_model(cfg, &params)?;
        let seeds: Vec<u64> = (0..cfg.eval.episodes).map(|_| rand::Rng::random(&mut rng)).collect();
        evaluate_policy(&model, &spec, &seeds)
    }
}

fn eval_series(records: &[MetricsRecord]) -> Vec<(usize, f64)> {
    RunRecord {
        records: records.to_vec(),
    }
    .evals()
}

/// Per-task weight trace: `(step, η per task)` at every training step.
pub fn eta_trace(records: &[MetricsRecord]) -> Vec<(usize, Vec<f64>)> {
    records
        .iter()
        .filter_map(|r| match r {
            MetricsRecord::Train { step, eta, .. } => Some((*step, eta.clone())),
            _ => None,
        })
        .collect()
}

/// Writes `returns.csv`/`returns.svg` (mean with a 95% band over the given
/// runs) and `eta.csv`/`eta.svg` (per-task weights of every run).
pub fn cmd_plot(files: &[PathBuf], out: &Path) -> Result<Curve> {
    if files.is_empty() {
        return Err(Error::Argument("plot needs at least one metrics file".into()));
    }
    let runs = files.iter().map(|f| read_metrics(f)).collect::<Result<Vec<_>>>()?;
    let series: Vec<Vec<(usize, f64)>> = runs.iter().map(|r| eval_series(r)).collect();
    if series.iter().any(Vec::is_empty) {
        return Err(Error::Validation("a metrics file holds no evaluation records".into()));
    }
    let curve = Curve::aggregate(&series)?;
    create_dir(out)?;

    let mut csv = String::from("env_steps,mean,ci_low,ci_high,seeds\n");
    for i in 0..curve.env_steps.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            curve.env_steps[i],
            curve.mean[i],
            curve.mean[i] - curve.ci[i],
            curve.mean[i] + curve.ci[i],
            curve.seeds
        );
    }
    write_file(&out.join("returns.csv"), &csv)?;
    write_file(
        &out.join("returns.svg"),
        &render_svg("mean return", "env steps", &[band_series("mean", &curve)]),
    )?;

    let mut csv = String::from("run,step,task,eta\n");
    let mut lines = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        let trace = eta_trace(r);
        let tasks = trace.first().map_or(0, |t| t.1.len());
        for task in 0..tasks {
            let mut pts = Vec::new();
            for (step, eta) in &trace {
                let _ = writeln!(csv, "{i},{step},{task},{}", eta[task]);
                pts.push((*step as f64, eta[task]));
            }
            lines.push(Series {
                label: format!("run {i} task {task}"),
                points: pts,
                band: None,
            });
        }
    }
    write_file(&out.join("eta.csv"), &csv)?;
    write_file(&out.join("eta.svg"), &render_svg("task weight", "training step", &lines))?;
    Ok(curve)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One plotted line, optionally with a symmetric band.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<f64>>,
}

pub fn band_series(label: &str, c: &Curve) -> Series {
    Series {
        label: label.to_string(),
        points: c.env_steps.iter().zip(&c.mean).map(|(&x, &y)| (x as f64, y)).collect(),
        band: Some(c.ci.clone()),
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal line chart with optional bands and a legend.
pub fn render_svg(y_label: &str, x_label: &str, series: &[Series]) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let b = s.band.as_ref().map_or(0.0, |b| b[i]);
            xs = (xs.0.min(x), xs.1.max(x));
            ys = (ys.0.min(y - b), ys.1.max(y + b));
        }
    }
    if !xs.0.is_finite() {
        xs = (0.0, 1.0);
        ys = (0.0, 1.0);
    }
    if xs.1 - xs.0 < 1e-12 {
        xs.1 = xs.0 + 1.0;
    }
    if ys.1 - ys.0 < 1e-12 {
        ys = (ys.0 - 0.5, ys.1 + 0.5);
    }
    let px = |x: f64| m + (x - xs.0) / (xs.1 - xs.0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - ys.0) / (ys.1 - ys.0) * (h - 2.0 * m);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>",
        h - m,
        w - m,
        h - m,
        h - m
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>", w / 2.0, h - 12.0);
    let _ = writeln!(svg, "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{y_label}</text>", h / 2.0, h / 2.0);
    for (v, anchor, x, y) in [
        (xs.0, "start", m, h - m + 14.0),
        (xs.1, "end", w - m, h - m + 14.0),
        (ys.0, "end", m - 4.0, h - m),
        (ys.1, "end", m - 4.0, m + 4.0),
    ] {
        let _ = writeln!(svg, "<text x=\"{x}\" y=\"{y}\" text-anchor=\"{anchor}\">{}</text>", fmt_tick(v));
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if let Some(b) = &s.band {
            let upper = s.points.iter().zip(b).map(|(&(x, y), &d)| format!("{:.1},{:.1}", px(x), py(y + d)));
            let lower = s.points.iter().zip(b).rev().map(|(&(x, y), &d)| format!("{:.1},{:.1}", px(x), py(y - d)));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(svg, "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>", pts.join(" "));
        }
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>", pts.join(" "));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            w - m - 120.0,
            m + 14.0 * i as f64,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Similar,
    Relevance,
    Components,
    Batch,
    Distill,
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "similar" => Ok(Study::Similar),
            "relevance" => Ok(Study::Relevance),
            "components" => Ok(Study::Components),
            "batch" => Ok(Study::Batch),
            "distill" => Ok(Study::Distill),
            other => Err(Error::Argument(format!(
                "unknown study {other:?} (similar, relevance, components, batch or distill)"
            ))),
        }
    }
}

/// Task sets shared by the studies.
#[derive(Clone, Debug, PartialEq)]
pub struct StudyPlan {
    /// The similar family; each member is a held-out target in turn. The
    /// component and batch studies use its first member.
    pub similar_pool: Vec<EnvSpec>,
    pub relevance_targets: Vec<EnvSpec>,
    /// Same-family pool of the relevance targets.
    pub relevance_pool: Vec<EnvSpec>,
    /// Irrelevant pretraining set for the relevance targets.
    pub cross_family: Vec<EnvSpec>,
    /// Teachers of the distillation comparison.
    pub distill_tasks: Vec<EnvSpec>,
    pub fast_threshold: f64,
}

impl Default for StudyPlan {
    fn default() -> Self {
        Self {
            similar_pool: (1..=5).map(EnvSpec::gauntlet).collect(),
            relevance_targets: vec![EnvSpec::maze(1)],
            relevance_pool: (1..=5).map(EnvSpec::maze).collect(),
            cross_family: (1..=4).map(EnvSpec::gauntlet).collect(),
            distill_tasks: (2..=5).map(EnvSpec::gauntlet).collect(),
            fast_threshold: 0.7,
        }
    }
}

/// Runs one study and writes `report.json` plus an SVG per compared curve set.
pub fn cmd_experiment(cfg: &RunConfig, study: Study, seeds: &[u64], out: &Path, cache: Option<&Path>) -> Result<String> {
    if seeds.is_empty() {
        return Err(Error::Argument("at least one seed is required".into()));
    }
    freeze_config(cfg, out)?;
    let mut lab = Lab::new(cfg.clone(), cache)?.verbose(true);
    let plan = StudyPlan::default();
    let mut charts: Vec<(String, Vec<Series>)> = Vec::new();
    let json = match study {
        Study::Similar => {
            let r = exp_similar_transfer(&mut lab, &plan.similar_pool, &plan.similar_pool, seeds, plan.fast_threshold)?;
            for c in &r.cells {
                charts.push((
                    c.target.replace(':', "-"),
                    vec![band_series("scratch", &c.scratch), band_series("xtra", &c.xtra)],
                ));
            }
            serde_json::to_string_pretty(&r)
        }
        Study::Relevance => {
            let r = exp_relevance_contrast(&mut lab, &plan.relevance_targets, &plan.relevance_pool, &plan.cross_family, seeds)?;
            for c in &r.cells {
                charts.push((
                    c.target.replace(':', "-"),
                    vec![
                        band_series("same family", &c.same_family),
                        band_series("cross family", &c.cross_family),
                        band_series("scratch", &c.scratch),
                    ],
                ));
            }
            serde_json::to_string_pretty(&r)
        }
        Study::Components => {
            let target = &plan.similar_pool[0];
            let r = exp_components(&mut lab, target, &others(&plan.similar_pool, target), seeds)?;
            charts.push((
                "components".into(),
                r.cells.iter().map(|c| band_series(&c.components, &c.curve)).collect(),
            ));
            serde_json::to_string_pretty(&r)
        }
        Study::Batch => {
            let r = exp_batch_control(&mut lab, &plan.similar_pool[0], seeds)?;
            charts.push((
                "batch".into(),
                vec![band_series("batch x1", &r.standard), band_series("batch x2", &r.doubled)],
            ));
            serde_json::to_string_pretty(&r)
        }
        Study::Distill => serde_json::to_string_pretty(&exp_distillation(&mut lab, &plan.distill_tasks, seeds)?),
    }
    .map_err(|e| Error::Validation(format!("report serialization: {e}")))?;
    write_file(&out.join("report.json"), &json)?;
    for (name, series) in &charts {
        write_file(&out.join(format!("{name}.svg")), &render_svg("mean return", "env steps", series))?;
    }
    Ok(json)
}
