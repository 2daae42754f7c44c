//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xtra::finetune::{adapt_loss, gradient_similarity, TaskWeightState};
use xtra::mcts::{run_search, SearchConfig};
use xtra::model::{ez_loss, ez_loss_value, LossCoefficients, ModelShape, UnrollBatch, WorldModel};
use xtra::nn::{Gradient, Matrix, ParamVector};
use xtra::targets::value_target;

// ---------------------------------------------------------------- random data

pub fn random_shape(rng: &mut impl Rng) -> ModelShape {
    ModelShape {
        obs_dim: rng.random_range(2..=6),
        latent_dim: rng.random_range(2..=4),
        hidden_dim: rng.random_range(3..=6),
        action_count: rng.random_range(2..=4),
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_distributions(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (o, x) in m.row_mut(r).iter_mut().zip(raw) {
            *o = x / s;
        }
    }
    m
}

pub fn random_batch(shape: &ModelShape, b: usize, k: usize, rng: &mut impl Rng) -> UnrollBatch {
    UnrollBatch {
        observations: random_matrix(b, shape.obs_dim, rng),
        actions: (0..b).map(|_| (0..k).map(|_| rng.random_range(0..shape.action_count)).collect()).collect(),
        target_rewards: random_matrix(b, k, rng),
        target_policies: (0..=k).map(|_| random_distributions(b, shape.action_count, rng)).collect(),
        target_values: random_matrix(b, k + 1, rng),
        next_observations: (0..k).map(|_| random_matrix(b, shape.obs_dim, rng)).collect(),
        importance_weights: (0..b).map(|_| rng.random_range(0.5..1.5)).collect(),
    }
}

pub fn random_coeffs(rng: &mut impl Rng) -> LossCoefficients {
    LossCoefficients {
        policy: rng.random_range(0.5..2.0),
        value: rng.random_range(0.1..1.0),
        consistency: rng.random_range(0.5..3.0),
    }
}

// ---------------------------------------------------------- loss oracle

fn seg<'a>(p: &'a ParamVector, name: &str) -> &'a [f64] {
    p.segment_values(name).unwrap_or_else(|| panic!("missing segment {name}"))
}

/// `x·W + b` with `W` stored row-major as `[in × out]`.
fn affine(p: &ParamVector, net: &str, layer: usize, x: &[f64]) -> Vec<f64> {
    let w = seg(p, &format!("{net}.{layer}.weight"));
    let b = seg(p, &format!("{net}.{layer}.bias"));
    let out = b.len();
    assert_eq!(w.len(), x.len() * out);
    let mut y = b.to_vec();
    for (i, xi) in x.iter().enumerate() {
        for j in 0..out {
            y[j] += xi * w[i * out + j];
        }
    }
    y
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn encode(p: &ParamVector, obs: &[f64]) -> Vec<f64> {
    affine(p, "repr", 1, &relu(affine(p, "repr", 0, obs)))
        .into_iter()
        .map(f64::tanh)
        .collect()
}

fn step(p: &ParamVector, latent: &[f64], action: usize, actions: usize) -> (Vec<f64>, f64) {
    let mut input = latent.to_vec();
    input.extend((0..actions).map(|a| if a == action { 1.0 } else { 0.0 }));
    let out = affine(p, "dyn", 1, &relu(affine(p, "dyn", 0, &input)));
    let l = latent.len();
    (out[..l].iter().map(|x| x.tanh()).collect(), out[l])
}

fn heads(p: &ParamVector, latent: &[f64]) -> (Vec<f64>, f64) {
    let mut out = affine(p, "pred", 1, &relu(affine(p, "pred", 0, latent)));
    let v = out.pop().unwrap();
    (out, v)
}

fn cross_entropy(target: &[f64], logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    target.iter().zip(logits).map(|(t, x)| -t * (x - lse)).sum()
}

/// The unrolled training loss evaluated sample by sample.
///
/// `anchor` fixes everything the training graph treats as a constant: the
/// consistency targets are encoded with `anchor`, and the latent handed from
/// step k ≥ 1 to step k+1 is `s·z(θ) + (1−s)·z(anchor)` with `s` the
/// backward scale. At `params == anchor` this is the plain loss; its
/// derivative there is the gradient the training graph should produce.
pub fn oracle_loss(params: &ParamVector, anchor: &ParamVector, shape: &ModelShape, batch: &UnrollBatch, c: LossCoefficients, s: f64) -> f64 {
    let b = batch.observations.rows();
    let k_steps = batch.next_observations.len();
    let a = shape.action_count;
    let l = shape.latent_dim as f64;
    let (mut pol, mut val, mut rew, mut con) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..b {
        let w = batch.importance_weights[i];
        let obs = batch.observations.row(i);
        let mut fixed = vec![encode(anchor, obs)];
        for k in 1..=k_steps {
            let (z, _) = step(anchor, &fixed[k - 1], batch.actions[i][k - 1], a);
            fixed.push(z);
        }
        let mut z = encode(params, obs);
        for k in 0..=k_steps {
            let scale = if k == 0 { 1.0 / b as f64 } else { 1.0 / (b * k_steps) as f64 };
            if k > 0 {
                let input: Vec<f64> = if k == 1 {
                    z.clone()
                } else {
                    z.iter().zip(&fixed[k - 1]).map(|(x, f)| s * x + (1.0 - s) * f).collect()
                };
                let (next, r) = step(params, &input, batch.actions[i][k - 1], a);
                let u = batch.target_rewards.row(i)[k - 1];
                rew += scale * w * (r - u) * (r - u);
                let target = encode(anchor, batch.next_observations[k - 1].row(i));
                con += scale / l * w * next.iter().zip(&target).map(|(x, t)| (x - t) * (x - t)).sum::<f64>();
                z = next;
            }
            let (logits, v) = heads(params, &z);
            pol += scale * w * cross_entropy(batch.target_policies[k].row(i), &logits);
            let zt = batch.target_values.row(i)[k];
            val += scale * w * (v - zt) * (v - zt);
        }
    }
    c.policy * pol + c.value * val + rew + c.consistency * con
}

pub struct GradientCheck {
    pub rel_error: f64,
    /// |oracle(θ0) − ez_loss_value(θ0)|.
    pub value_gap: f64,
    pub params: usize,
}

/// Central finite differences of [`oracle_loss`] against the analytic gradient.
pub fn gradient_check(seed: u64, fd_step: f64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = random_shape(&mut rng);
    let mut model = WorldModel::random(shape, &mut rng).unwrap();
    // zero biases can put a ReLU exactly on its kink, where the two-sided
    // difference and the subgradient disagree
    for v in model.params_mut().values_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let b = rng.random_range(1..=4);
    let k = rng.random_range(0..=3);
    let batch = random_batch(&shape, b, k, &mut rng);
    let coeffs = random_coeffs(&mut rng);
    let s = xtra::model::DYNAMICS_GRAD_SCALE;

    let (_, grad) = ez_loss(&model, &batch, coeffs).unwrap();
    let anchor = model.params().clone();
    let base = oracle_loss(&anchor, &anchor, &shape, &batch, coeffs, s);
    let value_gap = (base - ez_loss_value(&model, &batch, coeffs).unwrap().total).abs();

    let mut p = anchor.clone();
    let mut diff2 = 0.0;
    let mut norm2: f64 = 0.0;
    let mut fd_norm2: f64 = 0.0;
    for i in 0..p.len() {
        let x = anchor.values()[i];
        p.values_mut()[i] = x + fd_step;
        let up = oracle_loss(&p, &anchor, &shape, &batch, coeffs, s);
        p.values_mut()[i] = x - fd_step;
        let down = oracle_loss(&p, &anchor, &shape, &batch, coeffs, s);
        p.values_mut()[i] = x;
        let fd = (up - down) / (2.0 * fd_step);
        let g = grad.values()[i];
        diff2 += (fd - g) * (fd - g);
        norm2 += g * g;
        fd_norm2 += fd * fd;
    }
    let denom = norm2.sqrt().max(fd_norm2.sqrt()).max(1e-12);
    GradientCheck {
        rel_error: diff2.sqrt() / denom,
        value_gap,
        params: p.len(),
    }
}

// ------------------------------------------------------- value-target oracle

/// Discounted sum written out term by term with explicit powers.
pub fn brute_value_target(rewards: &[f64], values: &[f64], t: usize, k: usize, discount: f64) -> f64 {
    let mut z = 0.0;
    for i in 0..k {
        if t + i >= rewards.len() {
            return z;
        }
        z += discount.powi(i as i32) * rewards[t + i];
    }
    if t + k < rewards.len() {
        z += discount.powi(k as i32) * values[t + k];
    }
    z
}

pub struct ValueTargetCheck {
    pub max_error: f64,
    pub truncated: usize,
    pub cases: usize,
}

pub fn value_target_check(cases: usize, seed: u64) -> ValueTargetCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut truncated = 0;
    for _ in 0..cases {
        let len = rng.random_range(1..=40);
        let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t = rng.random_range(0..len);
        let k = rng.random_range(0..=12);
        let discount = rng.random_range(0.5..=1.0);
        if t + k >= len {
            truncated += 1;
        }
        let got = value_target(&rewards, t, k, discount, |i| values[i]);
        max_error = max_error.max((got - brute_value_target(&rewards, &values, t, k, discount)).abs());
    }
    ValueTargetCheck {
        max_error,
        truncated,
        cases,
    }
}

// ---------------------------------------------------------- planning oracle

pub const MDP_STATES: usize = 3;
pub const MDP_ACTIONS: usize = 2;
/// Optimal and runner-up action values differ by at least this much.
pub const MDP_MIN_GAP: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct TabularMdp {
    pub next: [[usize; MDP_ACTIONS]; MDP_STATES],
    pub reward: [[f64; MDP_ACTIONS]; MDP_STATES],
    pub discount: f64,
}

impl TabularMdp {
    pub fn random(rng: &mut impl Rng, discount: f64) -> Self {
        let mut next = [[0; MDP_ACTIONS]; MDP_STATES];
        let mut reward = [[0.0; MDP_ACTIONS]; MDP_STATES];
        for s in 0..MDP_STATES {
            for a in 0..MDP_ACTIONS {
                next[s][a] = rng.random_range(0..MDP_STATES);
                reward[s][a] = rng.random_range(-1.0..1.0);
            }
        }
        Self { next, reward, discount }
    }

    pub fn optimal_values(&self) -> [f64; MDP_STATES] {
        let mut v = [0.0; MDP_STATES];
        loop {
            let mut delta: f64 = 0.0;
            for s in 0..MDP_STATES {
                let best = (0..MDP_ACTIONS).map(|a| self.q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < 1e-13 {
                return v;
            }
        }
    }

    pub fn q(&self, v: &[f64; MDP_STATES], s: usize, a: usize) -> f64 {
        self.reward[s][a] + self.discount * v[self.next[s][a]]
    }

    /// Optimal action at `s` and the gap to the other action.
    pub fn greedy(&self, s: usize) -> (usize, f64) {
        let v = self.optimal_values();
        let q0 = self.q(&v, s, 0);
        let q1 = self.q(&v, s, 1);
        if q0 >= q1 {
            (0, q0 - q1)
        } else {
            (1, q1 - q0)
        }
    }

    /// World model whose `h`, `g`, `f` reproduce this MDP exactly: latents
    /// are ±1 state codes, `g` looks up each (state, action) pair in its
    /// hidden layer, and `f` outputs a flat prior with the optimal value.
    pub fn embed(&self) -> WorldModel {
        let shape = ModelShape {
            obs_dim: MDP_STATES,
            latent_dim: MDP_STATES,
            hidden_dim: MDP_STATES * MDP_ACTIONS,
            action_count: MDP_ACTIONS,
        };
        let v = self.optimal_values();
        let mut m = WorldModel::zeros(shape).unwrap();
        let layout = m.params().layout().clone();
        let p = m.params_mut().values_mut();
        let mut set = |name: &str, idx: usize, x: f64| {
            let sgm = layout.segment(name).unwrap();
            p[sgm.offset() + idx] = x;
        };
        let h = shape.hidden_dim;
        let sharp = 20.0;
        for s in 0..MDP_STATES {
            set("repr.0.weight", s * h + s, 1.0);
            set("repr.1.weight", s * MDP_STATES + s, 2.0 * sharp);
            set("repr.1.bias", s, -sharp);
        }
        for s in 0..MDP_STATES {
            for a in 0..MDP_ACTIONS {
                let u = s * MDP_ACTIONS + a;
                set("dyn.0.weight", s * h + u, 0.5);
                set("dyn.0.weight", (MDP_STATES + a) * h + u, 1.0);
                set("dyn.0.bias", u, -1.0);
                for j in 0..MDP_STATES {
                    let sign = if j == self.next[s][a] { 1.0 } else { -1.0 };
                    set("dyn.1.weight", u * (MDP_STATES + 1) + j, 2.0 * sharp * sign);
                }
                set("dyn.1.weight", u * (MDP_STATES + 1) + MDP_STATES, 2.0 * self.reward[s][a]);
            }
        }
        for s in 0..MDP_STATES {
            set("pred.0.weight", s * h + s, 0.5);
            set("pred.0.bias", s, 0.5);
            set("pred.1.weight", s * (MDP_ACTIONS + 1) + MDP_ACTIONS, v[s]);
        }
        m
    }
}

pub fn one_hot(i: usize, n: usize) -> Vec<f64> {
    (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

pub struct PlanningCheck {
    pub agreed: usize,
    pub trials: usize,
    /// Largest error of the embedded model's one-step predictions.
    pub model_error: f64,
}

/// Random MDPs share the search discount, so `discount` sets the planning
/// horizon of the whole trial.
pub fn planning_check(trials: usize, simulations: usize, discount: f64, seed: u64) -> PlanningCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SearchConfig {
        num_simulations: simulations,
        discount,
        ..SearchConfig::default()
    }
    .without_noise();
    let mut agreed = 0;
    let mut model_error: f64 = 0.0;
    for _ in 0..trials {
        let (mdp, root) = loop {
            let mdp = TabularMdp::random(&mut rng, cfg.discount);
            let root = rng.random_range(0..MDP_STATES);
            if mdp.greedy(root).1 >= MDP_MIN_GAP {
                break (mdp, root);
            }
        };
        let model = mdp.embed();
        let v = mdp.optimal_values();
        for s in 0..MDP_STATES {
            let (z, pred) = model.initial_inference(&one_hot(s, MDP_STATES)).unwrap();
            model_error = model_error.max((pred.value - v[s]).abs());
            for a in 0..MDP_ACTIONS {
                let (z2, r) = model.dynamics(&z, a).unwrap();
                model_error = model_error.max((r - mdp.reward[s][a]).abs());
                let code: Vec<f64> = one_hot(mdp.next[s][a], MDP_STATES).iter().map(|x| 2.0 * x - 1.0).collect();
                for (x, c) in z2.z.iter().zip(&code) {
                    model_error = model_error.max((x - c).abs());
                }
            }
        }
        let result = run_search(&model, &one_hot(root, MDP_STATES), &cfg, 0.0, &mut rng).unwrap();
        if result.chosen_action == mdp.greedy(root).0 {
            agreed += 1;
        }
    }
    PlanningCheck {
        agreed,
        trials,
        model_error,
    }
}

// -------------------------------------------------------- reweighting oracle

/// η in effect at every step, computed in closed form: 1 until the first
/// window closes, afterwards the share of above-threshold similarities in
/// the most recent window that closed strictly before the step.
pub fn eta_trace_oracle(sims: &[Vec<f64>], cycle: usize, window: usize, warmup: usize, threshold: f64) -> Vec<Vec<f64>> {
    let tasks = sims.first().map_or(0, Vec::len);
    (1..=sims.len())
        .map(|n| {
            let mut close = None;
            let mut c = 0;
            while warmup + c * cycle + window < n {
                close = Some(warmup + c * cycle + window);
                c += 1;
            }
            match close {
                None => vec![1.0; tasks],
                Some(e) => (0..tasks)
                    .map(|i| {
                        let hits = (e - window + 1..=e).filter(|&m| sims[m - 1][i] > threshold).count();
                        hits as f64 / window as f64
                    })
                    .collect(),
            }
        })
        .collect()
}

pub struct ReweightCase {
    pub cycle: usize,
    pub window: usize,
    pub warmup: usize,
    pub sims: Vec<Vec<f64>>,
}

pub fn random_reweight_case(rng: &mut impl Rng) -> ReweightCase {
    let cycle = rng.random_range(1..=40);
    let window = rng.random_range(1..=cycle);
    let warmup = rng.random_range(0..=30);
    let tasks = rng.random_range(1..=5);
    let steps = rng.random_range(1..=300);
    let mut pool = vec![-1.0, 0.0, 0.1, 0.1 + 1e-12, 0.5, 1.0];
    let sims = (0..steps)
        .map(|_| {
            (0..tasks)
                .map(|_| {
                    if rng.random_bool(0.3) {
                        pool.shuffle(rng);
                        pool[0]
                    } else {
                        rng.random_range(-1.0..=1.0)
                    }
                })
                .collect()
        })
        .collect();
    ReweightCase {
        cycle,
        window,
        warmup,
        sims,
    }
}

/// Drives [`TaskWeightState`] over the stream, logging η before each step
/// and feeding similarities only where they are requested.
pub fn logged_eta(case: &ReweightCase, threshold: f64) -> Vec<Vec<f64>> {
    let tasks = case.sims.first().map_or(0, Vec::len);
    let mut state = TaskWeightState::new(tasks, case.cycle, case.window, case.warmup, threshold).unwrap();
    let mut log = Vec::with_capacity(case.sims.len());
    for s in &case.sims {
        log.push(state.eta.clone());
        let sims = state.needs_similarity().then_some(s.as_slice());
        state.update(sims).unwrap();
    }
    log
}

pub fn reweight_check(instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .filter(|_| {
            let case = random_reweight_case(&mut rng);
            logged_eta(&case, 0.1) == eta_trace_oracle(&case.sims, case.cycle, case.window, case.warmup, 0.1)
        })
        .count()
}

// ------------------------------------------------------- linearity, cosine

/// Max abs difference between the combined gradient and one assembled
/// from separate loss calls.
pub fn linearity_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = random_shape(&mut rng);
    let model = WorldModel::random(shape, &mut rng).unwrap();
    let coeffs = random_coeffs(&mut rng);
    let k = rng.random_range(0..=3);
    let m = rng.random_range(1..=4);
    let target = random_batch(&shape, rng.random_range(1..=5), k, &mut rng);
    let offline: Vec<UnrollBatch> = (0..m).map(|_| random_batch(&shape, rng.random_range(1..=5), k, &mut rng)).collect();
    let eta: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..=1.0)).collect();
    let refs: Vec<&UnrollBatch> = offline.iter().collect();
    let out = adapt_loss(&model, &target, &refs, &eta, coeffs).unwrap();

    let (_, mut expected) = ez_loss(&model, &target, coeffs).unwrap();
    for (b, w) in offline.iter().zip(&eta) {
        let (_, g) = ez_loss(&model, b, coeffs).unwrap();
        for (e, x) in expected.values_mut().iter_mut().zip(g.values()) {
            *e += w * x;
        }
    }
    out.gradient
        .values()
        .iter()
        .zip(expected.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn random_gradient(like: &Gradient, rng: &mut impl Rng) -> Gradient {
    let v = (0..like.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
    Gradient::from_values(like.layout().clone(), v).unwrap()
}

/// Largest violation over the cosine-similarity identities.
pub fn cosine_violation(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = WorldModel::zeros(random_shape(&mut rng)).unwrap();
    let zero = Gradient::zeros(model.params().layout().clone());
    let g = random_gradient(&zero, &mut rng);
    let h = random_gradient(&zero, &mut rng);
    let mut neg = g.clone();
    neg.scale(-1.0);
    let (a, b) = (rng.random_range(1e-3..1e3), rng.random_range(1e-3..1e3));
    let mut ga = g.clone();
    ga.scale(a);
    let mut hb = h.clone();
    hb.scale(b);
    let sim = |x: &Gradient, y: &Gradient| gradient_similarity(x, y).unwrap();
    [
        (sim(&g, &g) - 1.0).abs(),
        (sim(&g, &neg) + 1.0).abs(),
        (sim(&ga, &hb) - sim(&g, &h)).abs(),
        sim(&zero, &g).abs(),
        sim(&g, &zero).abs(),
        sim(&zero, &zero).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

// ------------------------------------------------------------ pipeline runs

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use xtra::cli::{self, Ablations};
use xtra::config::RunConfig;
use xtra::metrics::{read_metrics, MetricsRecord};

/// Desk config shrunk so a full collect → pretrain → finetune pass takes
/// seconds.
pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig::desk();
    for (k, v) in [
        ("env.grid", "5"),
        ("env.episode_cap", "12"),
        ("model.latent_dim", "6"),
        ("model.hidden_dim", "12"),
        ("search.simulations", "4"),
        ("collect.checkpoints", "2"),
        ("collect.episodes_per_ckpt", "2"),
        ("collect.generator_env_steps", "120"),
        ("pretrain.tasks", "maze:2,maze:3"),
        ("pretrain.teacher_steps", "20"),
        ("pretrain.distill_steps", "20"),
        ("pretrain.multigame_steps", "20"),
        ("pretrain.bc_steps", "20"),
        ("pretrain.batch_size", "8"),
        ("replay.min_size", "40"),
        ("finetune.target", "maze:1"),
        ("finetune.env_steps", "160"),
        ("finetune.target_batch", "8"),
        ("finetune.offline_batch", "4"),
        ("finetune.selfplay_interval", "20"),
        ("finetune.cycle_steps", "20"),
        ("finetune.window_steps", "5"),
        ("finetune.warmup_steps", "10"),
        ("finetune.eval_points", "3"),
        ("eval.episodes", "2"),
    ] {
        c.set(k, v).unwrap();
    }
    c.validate().unwrap();
    c
}

/// `collect` then `pretrain` under `root`; returns the two directories.
pub fn pretrained_artifacts(cfg: &RunConfig, root: &Path) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    let pre = root.join("pretrained");
    cli::cmd_collect(cfg, &data, None).unwrap();
    cli::cmd_pretrain(cfg, &data, &pre, None).unwrap();
    (data, pre)
}

pub fn finetune_with(cfg: &RunConfig, ablations: &Ablations, out: &Path) -> Vec<MetricsRecord> {
    let mut c = cfg.clone();
    ablations.apply(&mut c);
    c.validate().unwrap();
    cli::cmd_finetune(&c, out).unwrap();
    read_metrics(&out.join(cli::METRICS)).unwrap()
}

pub fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

fn collect_files(dir: &Path, base: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect_files(&p, base, out);
        } else {
            out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
    }
}

/// Every file under `dir`, keyed by relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut m = BTreeMap::new();
    collect_files(dir, dir, &mut m);
    m
}

pub fn train_etas(records: &[MetricsRecord]) -> Vec<Vec<f64>> {
    records
        .iter()
        .filter_map(|r| match r {
            MetricsRecord::Train { eta, .. } => Some(eta.clone()),
            MetricsRecord::Eval { .. } => None,
        })
        .collect()
}

pub struct AblationCheck {
    /// `--no-pretraining --no-cross-task` against the scratch arm.
    pub no_pretraining_identical: bool,
    /// Every logged η with `--no-task-weights` equals 1, and some were logged.
    pub eta_pinned: bool,
    pub eta_logged: usize,
    /// Loading the empty component set against the scratch arm.
    pub empty_components_identical: bool,
}

pub fn ablation_check(root: &Path) -> AblationCheck {
    let mut cfg = tiny_config();
    let (data, pre) = pretrained_artifacts(&cfg, root);
    cfg.paths.data = data.display().to_string();
    cfg.paths.pretrained = pre.display().to_string();

    let mut scratch_cfg = tiny_config();
    scratch_cfg.finetune.cross_task = false;
    scratch_cfg.finetune.load_pretrained = false;
    let scratch = root.join("scratch");
    finetune_with(&scratch_cfg, &Ablations::default(), &scratch);

    let ablated = root.join("no_pretraining");
    finetune_with(
        &cfg,
        &Ablations {
            no_cross_task: true,
            no_pretraining: true,
            ..Ablations::default()
        },
        &ablated,
    );
    let identical = |dir: &Path| {
        same_bytes(&scratch.join(cli::METRICS), &dir.join(cli::METRICS)) && same_bytes(&scratch.join("model.ckpt"), &dir.join("model.ckpt"))
    };

    let pinned = root.join("no_task_weights");
    let etas = train_etas(&finetune_with(
        &cfg,
        &Ablations {
            no_task_weights: true,
            ..Ablations::default()
        },
        &pinned,
    ));

    let empty = root.join("empty_components");
    finetune_with(
        &cfg,
        &Ablations {
            no_cross_task: true,
            load_components: Some(Vec::new()),
            ..Ablations::default()
        },
        &empty,
    );

    AblationCheck {
        no_pretraining_identical: identical(&ablated),
        eta_pinned: !etas.is_empty() && etas.iter().flatten().all(|&e| e == 1.0),
        eta_logged: etas.iter().map(Vec::len).sum(),
        empty_components_identical: identical(&empty),
    }
}

pub struct PersistenceCheck {
    pub datasets_round_trip: bool,
    pub checkpoints_round_trip: bool,
    /// Command name and whether its rerun from the frozen config matched.
    pub reruns: Vec<(&'static str, bool)>,
}

fn rerun_cfg(dir: &Path) -> RunConfig {
    cli::resolve_config(Some(&dir.join(cli::RESOLVED_CONFIG)), None, &[], None).unwrap()
}

pub fn persistence_check(root: &Path) -> PersistenceCheck {
    use xtra::nn::{decode_params, encode_params};
    use xtra::replay::{decode_dataset, encode_dataset};

    let mut cfg = tiny_config();
    let (data, pre) = pretrained_artifacts(&cfg, &root.join("a"));
    cfg.paths.data = data.display().to_string();
    cfg.paths.pretrained = pre.display().to_string();
    let ft = root.join("a/finetune");
    cli::cmd_finetune(&cfg, &ft).unwrap();

    let mut datasets_round_trip = true;
    let mut checkpoints_round_trip = true;
    for (path, bytes) in tree_bytes(&root.join("a")) {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xtrj") => {
                let ds = decode_dataset(&bytes).unwrap();
                datasets_round_trip &= encode_dataset(&ds).unwrap() == bytes && decode_dataset(&encode_dataset(&ds).unwrap()).unwrap() == ds;
            }
            Some("ckpt") => {
                let p = decode_params(&bytes).unwrap();
                checkpoints_round_trip &= encode_params(&p) == bytes && decode_params(&encode_params(&p)).unwrap() == p;
            }
            _ => {}
        }
    }

    let b = root.join("b");
    cli::cmd_collect(&rerun_cfg(&data), &b.join("data"), None).unwrap();
    cli::cmd_pretrain(&rerun_cfg(&pre), &data, &b.join("pretrained"), None).unwrap();
    cli::cmd_finetune(&rerun_cfg(&ft), &b.join("finetune")).unwrap();
    let reruns = ["data", "pretrained", "finetune"]
        .into_iter()
        .zip(["collect", "pretrain", "finetune"])
        .map(|(dir, name)| (name, tree_bytes(&root.join("a").join(dir)) == tree_bytes(&b.join(dir))))
        .collect();
    PersistenceCheck {
        datasets_round_trip,
        checkpoints_round_trip,
        reruns,
    }
}
