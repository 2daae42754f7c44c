use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xtra::cli::{self, Ablations, Baseline, Study};
use xtra::config::{Preset, RunConfig};
use xtra::envs::EnvSpec;
use xtra::model::parse_components;
use xtra::Error;

#[derive(Parser)]
#[command(name = "xtra", version, about = "Cross-task world-model pretraining and finetuning on toy grid games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (`section.key = value` lines).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long)]
    preset: Option<Preset>,
    /// Override one key, e.g. `--set finetune.env_steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> xtra::Result<RunConfig> {
        let mut sets = self.sets.clone();
        if let Some(s) = self.seed {
            sets.push(format!("run.seed={s}"));
        }
        let env = std::env::var(cli::SEED_ENV).ok();
        cli::resolve_config(self.config.as_deref(), self.preset, &sets, env.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate offline datasets for the pretraining tasks.
    Collect {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Roll out these checkpoints instead of training generators.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        checkpoints: Option<Vec<PathBuf>>,
        #[arg(long)]
        episodes_per_ckpt: Option<usize>,
    },
    /// Train teachers and distill the student, or a baseline.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory written by `collect`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `multigame` or `bc`.
        #[arg(long)]
        baseline: Option<Baseline>,
    },
    /// Finetune on the target task.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Directory written by `collect`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Directory written by `pretrain`.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        no_cross_task: bool,
        #[arg(long)]
        no_pretraining: bool,
        #[arg(long)]
        no_task_weights: bool,
        #[arg(long)]
        freeze_repr: bool,
        /// Subset of `h,g,f` to load; an empty value loads nothing.
        #[arg(long)]
        load_components: Option<String>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task to play; defaults to the finetune target.
        #[arg(long)]
        task: Option<EnvSpec>,
    },
    /// Aggregate metrics files into curves.
    Plot {
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a canned study: similar, relevance, components, batch or distill.
    Experiment {
        study: Study,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Artifact cache shared between studies.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> xtra::Result<()> {
    match cli.command {
        Command::Collect {
            cfg,
            out,
            checkpoints,
            episodes_per_ckpt,
        } => {
            let mut c = cfg.resolve()?;
            if let Some(n) = episodes_per_ckpt {
                c.collect.episodes_per_ckpt = n;
            }
            let s = cli::cmd_collect(&c, &out, checkpoints.as_deref())?;
            for (task, n) in s.tasks {
                println!("{task}: {n} trajectories");
            }
        }
        Command::Pretrain {
            cfg,
            data,
            out,
            baseline,
        } => {
            let s = cli::cmd_pretrain(&cfg.resolve()?, &data, &out, baseline)?;
            for t in &s.reused {
                println!("teacher {t}: reused");
            }
            for f in &s.outputs {
                println!("wrote {}", out.join(f).display());
            }
        }
        Command::Finetune {
            cfg,
            out,
            data,
            pretrained,
            no_cross_task,
            no_pretraining,
            no_task_weights,
            freeze_repr,
            load_components,
        } => {
            let mut c = cfg.resolve()?;
            if let Some(d) = data {
                c.paths.data = d.display().to_string();
            }
            if let Some(p) = pretrained {
                c.paths.pretrained = p.display().to_string();
            }
            Ablations {
                no_cross_task,
                no_pretraining,
                no_task_weights,
                freeze_repr,
                load_components: load_components.as_deref().map(parse_components).transpose()?,
            }
            .apply(&mut c);
            c.validate()?;
            let s = cli::cmd_finetune(&c, &out)?;
            if let Some((steps, r)) = s.evals.last() {
                println!("final mean return {r:.4} at {steps} env steps");
            }
        }
        Command::Eval { cfg, checkpoint, task } => {
            let s = cli::cmd_eval(&cfg.resolve()?, &checkpoint, task.as_ref())?;
            println!("mean return {:.4} over {} episodes", s.mean_return, s.returns.len());
        }
        Command::Plot { files, out } => {
            let c = cli::cmd_plot(&files, &out)?;
            println!("{} seeds, final mean {:.4} ± {:.4}", c.seeds, c.final_mean(), c.final_ci());
        }
        Command::Experiment {
            study,
            cfg,
            out,
            seeds,
            cache,
        } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            cli::cmd_experiment(&cfg.resolve()?, study, &seeds, &out, cache.as_deref())?;
            println!("wrote {}", out.join("report.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let parsed = Cli::parse();
    match run(parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &Error) -> u8 {
    cli::exit_code(e) as u8
}
