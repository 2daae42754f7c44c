//! Acceptance runner: one PASS/FAIL line per criterion. Failures exit
//! non-zero only when `XTRA_ACCEPTANCE_STRICT` is set, so the report can run
//! inside the ordinary test suite. The study criteria train at desk scale
//! and take tens of minutes on one core; set `XTRA_ACCEPTANCE_CACHE` to keep
//! their artifacts between runs.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::*;
use xtra::config::RunConfig;
use xtra::envs::EnvSpec;
use xtra::mcts::default_discount;
use xtra::experiments::{exp_distillation, exp_similar_transfer, median, Arm, Lab};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(t: Instant, limit: Duration) -> (bool, String) {
    let e = t.elapsed();
    (e <= limit, format!("{:.1}s (limit {}s)", e.as_secs_f64(), limit.as_secs()))
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let checks: Vec<GradientCheck> = (0..24).map(|s| gradient_check(s, 1e-5)).collect();
    let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let gap = checks.iter().map(|c| c.value_gap).fold(0.0, f64::max);
    let (fast, time) = within(t, Duration::from_secs(60));
    verdict(
        worst <= 1e-4 && gap < 1e-12 && fast,
        format!("{} models, max relative error {worst:.2e}, loss value gap {gap:.1e}, {time}", checks.len()),
    )
}

fn value_targets() -> Verdict {
    let c = value_target_check(1000, 2024);
    verdict(
        c.max_error <= 1e-12,
        format!("{} trajectories ({} truncated), max error {:.1e}", c.cases, c.truncated, c.max_error),
    )
}

fn planning() -> Verdict {
    let t = Instant::now();
    let c = planning_check(50, 200, default_discount(), 99);
    let (fast, time) = within(t, Duration::from_secs(60));
    verdict(
        c.agreed == c.trials && c.model_error < 1e-12 && fast,
        format!("{}/{} trials agree, embedded model error {:.1e}, {time}", c.agreed, c.trials, c.model_error),
    )
}

fn reweighting() -> Verdict {
    let ok = reweight_check(100, 404);
    verdict(ok == 100, format!("{ok}/100 instances match the trace oracle"))
}

fn linearity() -> Verdict {
    let gap = (0..50).map(linearity_gap).fold(0.0, f64::max);
    verdict(gap <= 1e-12, format!("50 batches, max deviation {gap:.1e}"))
}

fn cosine() -> Verdict {
    let v = (0..100).map(cosine_violation).fold(0.0, f64::max);
    verdict(v <= 1e-12, format!("100 gradient pairs, max violation {v:.1e}"))
}

fn distillation(lab: &mut Lab, tasks: &[EnvSpec]) -> Verdict {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let r = match exp_distillation(lab, tasks, &seeds) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("study failed: {e}")),
    };
    let (fast, time) = within(t, Duration::from_secs(15 * 60));
    let per_task: Vec<String> = r
        .cells
        .iter()
        .map(|c| {
            format!(
                "{} kl {:.3} teacher {:.2} student {:.2} multigame {:.2}",
                c.task,
                c.heldout_kl.iter().sum::<f64>() / c.heldout_kl.len() as f64,
                c.teacher_return,
                c.student_median,
                c.multigame_median
            )
        })
        .collect();
    verdict(
        r.max_mean_kl <= 0.05 && r.student_wins >= 3 && fast,
        format!(
            "max KL {:.3}, student ahead on {}/4; {}; {time}",
            r.max_mean_kl,
            r.student_wins,
            per_task.join("; ")
        ),
    )
}

fn transfer(lab: &mut Lab, pool: &[EnvSpec]) -> Verdict {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..5).collect();
    let r = match exp_similar_transfer(lab, pool, pool, &seeds, 0.7) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("study failed: {e}")),
    };
    let (fast, time) = within(t, Duration::from_secs(2 * 3600));
    let per_target: Vec<String> = r
        .cells
        .iter()
        .map(|c| match c.reach_fraction {
            Some(f) => format!("{} {:.0}%", c.target, 100.0 * f),
            None => format!("{} never", c.target),
        })
        .collect();
    verdict(
        r.fast_variants >= 3 && fast,
        format!(
            "{}/{} variants reach the scratch final return within 70% of the budget ({}); {time}",
            r.fast_variants,
            r.cells.len(),
            per_target.join(", ")
        ),
    )
}

fn safety(lab: &mut Lab, target: &EnvSpec, cross_family: &[EnvSpec]) -> Verdict {
    let seeds: Vec<u64> = (0..5).collect();
    let run = |lab: &mut Lab| -> xtra::Result<(f64, f64, f64)> {
        let (scratch, _) = lab.curve(target, &Arm::scratch(), &seeds)?;
        let (cross, runs) = lab.curve(target, &Arm::xtra(cross_family), &seeds)?;
        let etas: Vec<f64> = runs.iter().flat_map(|r| r.final_eta()).collect();
        Ok((scratch.final_mean(), cross.final_mean(), median(&etas)))
    };
    match run(lab) {
        Ok((scratch, cross, eta)) => {
            let rel = (cross - scratch) / scratch.abs();
            verdict(
                rel.abs() <= 0.15 && eta < 0.5,
                format!(
                    "{}: cross-family {cross:.3} vs scratch {scratch:.3} ({:+.1}%), median final η {eta:.2}",
                    target.task_id(),
                    100.0 * rel
                ),
            )
        }
        Err(e) => verdict(false, format!("study failed: {e}")),
    }
}

fn ablations() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let c = ablation_check(dir.path());
    verdict(
        c.no_pretraining_identical && c.eta_pinned && c.empty_components_identical,
        format!(
            "no-pretraining/no-cross-task identical: {}, η pinned at 1 ({} values): {}, empty components identical: {}",
            c.no_pretraining_identical, c.eta_logged, c.eta_pinned, c.empty_components_identical
        ),
    )
}

fn persistence() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let c = persistence_check(dir.path());
    let reruns: Vec<String> = c.reruns.iter().map(|(n, ok)| format!("{n} {}", if *ok { "same" } else { "DIFFERS" })).collect();
    verdict(
        c.datasets_round_trip && c.checkpoints_round_trip && c.reruns.iter().all(|r| r.1),
        format!(
            "datasets {}, checkpoints {}, reruns: {}",
            c.datasets_round_trip,
            c.checkpoints_round_trip,
            reruns.join(", ")
        ),
    )
}

fn main() {
    let cache: PathBuf;
    let _tmp;
    match std::env::var_os("XTRA_ACCEPTANCE_CACHE") {
        Some(p) => cache = PathBuf::from(p),
        None => {
            let t = tempfile::tempdir().unwrap();
            cache = t.path().to_path_buf();
            _tmp = t;
        }
    }
    let verbose = std::env::var_os("XTRA_ACCEPTANCE_VERBOSE").is_some();
    let mut lab = Lab::new(RunConfig::desk(), Some(&cache)).unwrap().verbose(verbose);

    let similar: Vec<EnvSpec> = (1..=5).map(EnvSpec::gauntlet).collect();
    let cross_family: Vec<EnvSpec> = (1..=4).map(EnvSpec::gauntlet).collect();
    let distill_tasks: Vec<EnvSpec> = (2..=5).map(EnvSpec::gauntlet).collect();

    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Lab) -> Verdict>)> = vec![
        ("gradient correctness", Box::new(|_| gradients())),
        ("value-target oracle", Box::new(|_| value_targets())),
        ("planning oracle", Box::new(|_| planning())),
        ("reweighting protocol", Box::new(|_| reweighting())),
        ("combined-loss linearity", Box::new(|_| linearity())),
        ("cosine invariants", Box::new(|_| cosine())),
        ("distillation fidelity", Box::new(move |lab| distillation(lab, &distill_tasks))),
        ("transfer speedup", Box::new(move |lab| transfer(lab, &similar))),
        (
            "irrelevant-task safety",
            Box::new(move |lab| safety(lab, &EnvSpec::maze(1), &cross_family)),
        ),
        ("ablation reductions", Box::new(|_| ablations())),
        ("persistence", Box::new(|_| persistence())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let v = check(&mut lab);
        if !v.pass {
            failed += 1;
        }
        println!("{} [{}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("{} of 11 criteria pass", 11 - failed);
    if failed > 0 && std::env::var_os("XTRA_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
