//! Run configuration: every tunable, two presets, and the flat
//! `section.key = value` file format.

use std::path::Path;

use crate::envs::{EnvSpec, DEFAULT_EPISODE_CAP, DEFAULT_GRID, DEFAULT_STACK};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::mcts::{self, RootNoise, SearchConfig};
use crate::model::{format_components, parse_components, Component, LossCoefficients, ModelShape};
use crate::nn::LrMode;
use crate::targets::{TargetSource, TargetSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct RunSection {
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSection {
    pub grid: usize,
    pub episode_cap: usize,
    pub stack: usize,
}

impl EnvSection {
    /// Applies the shared grid, cap and stack to a task.
    pub fn resolve(&self, spec: &EnvSpec) -> EnvSpec {
        spec.clone()
            .with_grid(self.grid)
            .with_episode_cap(self.episode_cap)
            .with_stack(self.stack)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub latent_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimSection {
    pub lr_start: f64,
    pub lr_end: f64,
    pub lr_mode: LrMode,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossSection {
    pub policy_coeff: f64,
    pub value_coeff: f64,
    pub consistency_coeff: f64,
    pub unroll_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSection {
    pub td_steps: usize,
    pub discount: f64,
    pub reanalyze_ratio: f64,
    pub target_net_interval: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplaySection {
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub min_size: usize,
    pub capacity: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSection {
    pub simulations: usize,
    pub noise_ratio: f64,
    pub dirichlet_alpha: f64,
    pub pb_c_init: f64,
    pub pb_c_base: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSection {
    /// Snapshots taken from a from-scratch run on each task.
    pub checkpoints: usize,
    pub episodes_per_ckpt: usize,
    /// Env-step budget of the run that produces the snapshots.
    pub generator_env_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSection {
    pub tasks: Vec<EnvSpec>,
    pub teacher_steps: usize,
    pub distill_steps: usize,
    pub multigame_steps: usize,
    pub bc_steps: usize,
    pub batch_size: usize,
    /// Share of each dataset's trajectories kept out of distillation for the
    /// held-out fidelity measurement.
    pub heldout_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSection {
    pub target: EnvSpec,
    pub env_steps: usize,
    pub target_batch: usize,
    pub offline_batch: usize,
    pub cross_task: bool,
    pub load_pretrained: bool,
    pub dynamic_weights: bool,
    pub freeze_repr: bool,
    pub load_components: Vec<Component>,
    pub sim_threshold: f64,
    /// Cycle length `T` in training steps.
    pub cycle_steps: usize,
    /// Measurement window `N` in training steps.
    pub window_steps: usize,
    /// Warmup `W` in training steps; `None` means a tenth of the env budget.
    pub warmup_steps: Option<usize>,
    pub selfplay_interval: usize,
    /// Evaluations spread evenly over the budget, plus one at step 0.
    pub eval_points: usize,
    /// Extra gradient steps at a tenth of the final learning rate; 0 disables.
    pub extra_lowlr_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub episodes: usize,
}

/// Inputs of the finetuning stage; empty means none.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathsSection {
    /// Directory written by `collect`.
    pub data: String,
    /// Directory written by `pretrain`.
    pub pretrained: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub loss: LossSection,
    pub targets: TargetSection,
    pub replay: ReplaySection,
    pub search: SearchSection,
    pub collect: CollectSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

/// How a config value is read from and written to text.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self>;
    fn render(&self) -> String;
}

macro_rules! display_fromstr_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self> {
                s.parse().map_err(|_| Error::Config(format!("cannot parse {s:?}")))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_fromstr_value!(usize, u64, f64, bool);

impl ConfigValue for String {
    fn parse_value(s: &str) -> Result<Self> {
        Ok(s.to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for EnvSpec {
    fn parse_value(s: &str) -> Result<Self> {
        s.parse()
    }
    fn render(&self) -> String {
        self.task_id()
    }
}

impl ConfigValue for Vec<EnvSpec> {
    fn parse_value(s: &str) -> Result<Self> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(EnvSpec::task_id).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Vec<Component> {
    fn parse_value(s: &str) -> Result<Self> {
        parse_components(s)
    }
    fn render(&self) -> String {
        format_components(self)
    }
}

impl ConfigValue for Option<usize> {
    fn parse_value(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(None)
        } else {
            usize::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "auto".to_string(), |v| v.to_string())
    }
}

impl ConfigValue for LrMode {
    fn parse_value(s: &str) -> Result<Self> {
        if s == "linear" {
            return Ok(LrMode::Linear);
        }
        if let Some(f) = s.strip_prefix("step@") {
            let fraction = f64::parse_value(f)?;
            return Ok(LrMode::Step { fraction });
        }
        Err(Error::Config(format!("lr mode {s:?} is neither `linear` nor `step@<fraction>`")))
    }
    fn render(&self) -> String {
        match self {
            LrMode::Linear => "linear".into(),
            LrMode::Step { fraction } => format!("step@{fraction}"),
        }
    }
}

macro_rules! config_keys {
    ($($key:literal => $sec:ident . $field:ident),* $(,)?) => {
        /// Every recognised key, in file order.
        pub const CONFIG_KEYS: &[&str] = &[$($key),*];

        impl RunConfig {
            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => {
                        self.$sec.$field = ConfigValue::parse_value(value.trim())
                            .map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
                    })*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            pub fn to_doc(&self) -> KvDoc {
                let mut doc = KvDoc::new();
                $(doc.set($key, ConfigValue::render(&self.$sec.$field));)*
                doc
            }
        }
    };
}

config_keys! {
    "run.seed" => run.seed,
    "env.grid" => env.grid,
    "env.episode_cap" => env.episode_cap,
    "env.stack" => env.stack,
    "model.latent_dim" => model.latent_dim,
    "model.hidden_dim" => model.hidden_dim,
    "optim.lr_start" => optim.lr_start,
    "optim.lr_end" => optim.lr_end,
    "optim.lr_mode" => optim.lr_mode,
    "optim.momentum" => optim.momentum,
    "optim.weight_decay" => optim.weight_decay,
    "optim.max_grad_norm" => optim.max_grad_norm,
    "loss.policy_coeff" => loss.policy_coeff,
    "loss.value_coeff" => loss.value_coeff,
    "loss.consistency_coeff" => loss.consistency_coeff,
    "loss.unroll_steps" => loss.unroll_steps,
    "targets.td_steps" => targets.td_steps,
    "targets.discount" => targets.discount,
    "targets.reanalyze_ratio" => targets.reanalyze_ratio,
    "targets.target_net_interval" => targets.target_net_interval,
    "replay.alpha" => replay.alpha,
    "replay.beta_start" => replay.beta_start,
    "replay.beta_end" => replay.beta_end,
    "replay.min_size" => replay.min_size,
    "replay.capacity" => replay.capacity,
    "search.simulations" => search.simulations,
    "search.noise_ratio" => search.noise_ratio,
    "search.dirichlet_alpha" => search.dirichlet_alpha,
    "search.pb_c_init" => search.pb_c_init,
    "search.pb_c_base" => search.pb_c_base,
    "collect.checkpoints" => collect.checkpoints,
    "collect.episodes_per_ckpt" => collect.episodes_per_ckpt,
    "collect.generator_env_steps" => collect.generator_env_steps,
    "pretrain.tasks" => pretrain.tasks,
    "pretrain.teacher_steps" => pretrain.teacher_steps,
    "pretrain.distill_steps" => pretrain.distill_steps,
    "pretrain.multigame_steps" => pretrain.multigame_steps,
    "pretrain.bc_steps" => pretrain.bc_steps,
    "pretrain.batch_size" => pretrain.batch_size,
    "pretrain.heldout_fraction" => pretrain.heldout_fraction,
    "finetune.target" => finetune.target,
    "finetune.env_steps" => finetune.env_steps,
    "finetune.target_batch" => finetune.target_batch,
    "finetune.offline_batch" => finetune.offline_batch,
    "finetune.cross_task" => finetune.cross_task,
    "finetune.load_pretrained" => finetune.load_pretrained,
    "finetune.dynamic_weights" => finetune.dynamic_weights,
    "finetune.freeze_repr" => finetune.freeze_repr,
    "finetune.load_components" => finetune.load_components,
    "finetune.sim_threshold" => finetune.sim_threshold,
    "finetune.cycle_steps" => finetune.cycle_steps,
    "finetune.window_steps" => finetune.window_steps,
    "finetune.warmup_steps" => finetune.warmup_steps,
    "finetune.selfplay_interval" => finetune.selfplay_interval,
    "finetune.eval_points" => finetune.eval_points,
    "finetune.extra_lowlr_steps" => finetune.extra_lowlr_steps,
    "eval.episodes" => eval.episodes,
    "paths.data" => paths.data,
    "paths.pretrained" => paths.pretrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-scale hyperparameters, with the toy environments.
    Full,
    /// Budgets sized for a single workstation core.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset {other:?} (full or desk)"))),
        }
    }
}

impl RunConfig {
    pub fn full() -> Self {
        Self {
            run: RunSection { seed: 0 },
            env: EnvSection {
                grid: DEFAULT_GRID,
                episode_cap: DEFAULT_EPISODE_CAP,
                stack: DEFAULT_STACK,
            },
            model: ModelSection {
                latent_dim: 64,
                hidden_dim: 256,
            },
            optim: OptimSection {
                lr_start: 0.2,
                lr_end: 0.02,
                lr_mode: LrMode::Linear,
                momentum: 0.9,
                weight_decay: 1e-4,
                max_grad_norm: 5.0,
            },
            loss: LossSection {
                policy_coeff: 1.0,
                value_coeff: 0.25,
                consistency_coeff: 2.0,
                unroll_steps: 5,
            },
            targets: TargetSection {
                td_steps: 5,
                discount: mcts::default_discount(),
                reanalyze_ratio: 1.0,
                target_net_interval: 200,
            },
            replay: ReplaySection {
                alpha: 0.6,
                beta_start: 0.4,
                beta_end: 1.0,
                min_size: 2000,
                capacity: 100_000,
            },
            search: SearchSection {
                simulations: 50,
                noise_ratio: 0.3,
                dirichlet_alpha: 0.3,
                pb_c_init: mcts::DEFAULT_PB_C_INIT,
                pb_c_base: mcts::DEFAULT_PB_C_BASE,
            },
            collect: CollectSection {
                checkpoints: 12,
                episodes_per_ckpt: 64,
                generator_env_steps: 100_000,
            },
            pretrain: PretrainSection {
                tasks: (1..=4).map(EnvSpec::maze).collect(),
                teacher_steps: 100_000,
                distill_steps: 100_000,
                multigame_steps: 100_000,
                bc_steps: 100_000,
                batch_size: 256,
                heldout_fraction: 0.125,
            },
            finetune: FinetuneSection {
                target: EnvSpec::maze(0),
                env_steps: 100_000,
                target_batch: 256,
                offline_batch: 256,
                cross_task: true,
                load_pretrained: true,
                dynamic_weights: true,
                freeze_repr: false,
                load_components: Component::ALL.to_vec(),
                sim_threshold: 0.1,
                cycle_steps: 500,
                window_steps: 50,
                warmup_steps: None,
                selfplay_interval: 100,
                eval_points: 10,
                extra_lowlr_steps: 0,
            },
            eval: EvalSection { episodes: 32 },
            paths: PathsSection::default(),
        }
    }

    pub fn desk() -> Self {
        let mut c = Self::full();
        c.model = ModelSection {
            latent_dim: 24,
            hidden_dim: 64,
        };
        c.targets.reanalyze_ratio = 0.25;
        c.replay.min_size = 200;
        c.replay.capacity = 20_000;
        c.search.simulations = 16;
        c.collect.episodes_per_ckpt = 8;
        c.collect.generator_env_steps = 2000;
        c.pretrain.teacher_steps = 5000;
        c.pretrain.distill_steps = 10_000;
        c.pretrain.multigame_steps = 5000;
        c.pretrain.bc_steps = 2000;
        c.pretrain.batch_size = 32;
        c.finetune.env_steps = 2000;
        c.finetune.target_batch = 32;
        c.finetune.offline_batch = 16;
        c.finetune.selfplay_interval = 100;
        c
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Full => Self::full(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Starts from `base` and applies every entry of `doc`; unknown keys are errors.
    pub fn from_doc(base: Self, doc: &KvDoc) -> Result<Self> {
        let mut c = base;
        for (k, v) in doc.entries() {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file. A `preset = desk|full` line selects the base.
    pub fn load(path: &Path) -> Result<Self> {
        let mut doc = KvDoc::load(path)?;
        let base = match doc.get("preset") {
            Some(p) => Self::preset(p.parse()?),
            None => Self::desk(),
        };
        doc = KvDoc::parse(
            &doc.entries()
                .iter()
                .filter(|(k, _)| k != "preset")
                .map(|(k, v)| format!("{k} = {v}\n"))
                .collect::<String>(),
        )?;
        Self::from_doc(base, &doc).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_doc().save(path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.env.grid < 4 || self.env.stack == 0 || self.env.episode_cap == 0 {
            return bad("env.grid must be at least 4, env.stack and env.episode_cap positive");
        }
        if self.model.latent_dim == 0 || self.model.hidden_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if !(self.optim.lr_start > 0.0 && self.optim.lr_end > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.optim.max_grad_norm > 0.0) {
            return bad("optim.max_grad_norm must be positive");
        }
        self.target_spec(TargetSource::Reanalyze).validate()?;
        if self.targets.target_net_interval == 0 || self.finetune.selfplay_interval == 0 {
            return bad("network refresh intervals must be positive");
        }
        if self.search.simulations == 0 {
            return bad("search.simulations must be positive");
        }
        if self.finetune.target_batch == 0 || self.pretrain.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.finetune.cross_task && self.finetune.offline_batch == 0 {
            return bad("finetune.offline_batch must be positive when cross-task learning is on");
        }
        if self.finetune.window_steps == 0 || self.finetune.window_steps > self.finetune.cycle_steps {
            return bad("finetune.window_steps must be in 1..=cycle_steps");
        }
        if self.eval.episodes == 0 {
            return bad("eval.episodes must be positive");
        }
        if !(0.0..1.0).contains(&self.pretrain.heldout_fraction) {
            return bad("pretrain.heldout_fraction must be in [0, 1)");
        }
        Ok(())
    }

    pub fn model_shape(&self) -> ModelShape {
        let probe = self.env.resolve(&self.finetune.target);
        ModelShape {
            obs_dim: probe.obs_dim(),
            latent_dim: self.model.latent_dim,
            hidden_dim: self.model.hidden_dim,
            action_count: probe.action_count(),
        }
    }

    pub fn loss_coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            policy: self.loss.policy_coeff,
            value: self.loss.value_coeff,
            consistency: self.loss.consistency_coeff,
        }
    }

    pub fn target_spec(&self, source: TargetSource) -> TargetSpec {
        TargetSpec {
            td_steps: self.targets.td_steps,
            discount: self.targets.discount,
            unroll_steps: self.loss.unroll_steps,
            reanalyze_ratio: self.targets.reanalyze_ratio,
            source,
        }
    }

    /// Search settings for acting during training (with root noise).
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            num_simulations: self.search.simulations,
            discount: self.targets.discount,
            pb_c_init: self.search.pb_c_init,
            pb_c_base: self.search.pb_c_base,
            noise: (self.search.noise_ratio > 0.0).then_some(RootNoise {
                ratio: self.search.noise_ratio,
                alpha: self.search.dirichlet_alpha,
            }),
        }
    }

    /// Warmup in training steps.
    pub fn warmup_steps(&self) -> usize {
        self.finetune
            .warmup_steps
            .unwrap_or(self.finetune.env_steps / 10)
    }

    pub fn target_env(&self) -> EnvSpec {
        self.env.resolve(&self.finetune.target)
    }

    pub fn pretrain_envs(&self) -> Vec<EnvSpec> {
        self.pretrain.tasks.iter().map(|t| self.env.resolve(t)).collect()
    }
}
