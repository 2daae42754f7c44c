//! Monte Carlo tree search in the model's latent space.
//!
//! Selection uses pUCT over min-max normalised values, leaves are expanded
//! with one dynamics + prediction call, and values are backed up with the
//! model's predicted rewards.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::model::{LatentState, WorldModel};

/// Default simulation count.
pub const DEFAULT_SIMULATIONS: usize = 50;
/// Default root noise mixing ratio ξ.
pub const DEFAULT_NOISE_RATIO: f64 = 0.3;
pub const DEFAULT_DIRICHLET_ALPHA: f64 = 0.3;
pub const DEFAULT_PB_C_INIT: f64 = 1.25;
pub const DEFAULT_PB_C_BASE: f64 = 19652.0;

/// Default discount, `0.997⁴`.
pub fn default_discount() -> f64 {
    0.997f64.powi(4)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub num_simulations: usize,
    pub discount: f64,
    pub pb_c_init: f64,
    pub pb_c_base: f64,
    /// Root noise; `None` disables it.
    pub noise: Option<RootNoise>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootNoise {
    /// Mixing ratio ξ.
    pub ratio: f64,
    /// Dirichlet concentration α.
    pub alpha: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_simulations: DEFAULT_SIMULATIONS,
            discount: default_discount(),
            pb_c_init: DEFAULT_PB_C_INIT,
            pb_c_base: DEFAULT_PB_C_BASE,
            noise: Some(RootNoise {
                ratio: DEFAULT_NOISE_RATIO,
                alpha: DEFAULT_DIRICHLET_ALPHA,
            }),
        }
    }
}

impl SearchConfig {
    pub fn without_noise(&self) -> Self {
        Self {
            noise: None,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    /// Visit-count distribution at the root, tempered.
    pub policy_target: Vec<f64>,
    pub root_value: f64,
    /// Most visited root action, lowest id on ties.
    pub chosen_action: usize,
    pub visit_counts: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchNode {
    pub prior: f64,
    pub visit_count: u32,
    pub value_sum: f64,
    pub reward: f64,
    pub latent: Option<LatentState>,
    /// Arena indices of children, one per action; empty until expanded.
    pub children: Vec<usize>,
}

impl SearchNode {
    pub fn new(prior: f64) -> Self {
        Self {
            prior,
            visit_count: 0,
            value_sum: 0.0,
            reward: 0.0,
            latent: None,
            children: Vec::new(),
        }
    }

    pub fn is_expanded(&self) -> bool {
        !self.children.is_empty()
    }

    pub fn value(&self) -> f64 {
        if self.visit_count == 0 {
            0.0
        } else {
            self.value_sum / self.visit_count as f64
        }
    }
}

/// Running bounds used to map backed-up values into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinMaxStats {
    pub min_seen: f64,
    pub max_seen: f64,
}

impl Default for MinMaxStats {
    fn default() -> Self {
        Self {
            min_seen: f64::INFINITY,
            max_seen: f64::NEG_INFINITY,
        }
    }
}

impl MinMaxStats {
    pub fn update(&mut self, value: f64) {
        self.min_seen = self.min_seen.min(value);
        self.max_seen = self.max_seen.max(value);
    }

    pub fn normalize(&self, value: f64) -> f64 {
        if self.max_seen > self.min_seen {
            ((value - self.min_seen) / (self.max_seen - self.min_seen)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }
}

/// pUCT score of a child given its (unnormalised) value estimate `q`.
pub fn puct_score(
    prior: f64,
    child_visits: u32,
    q: f64,
    parent_visits: u32,
    stats: &MinMaxStats,
    pb_c_init: f64,
    pb_c_base: f64,
) -> f64 {
    let n = parent_visits as f64;
    let c = pb_c_init + ((n + pb_c_base + 1.0) / pb_c_base).ln();
    let exploration = prior * n.sqrt() / (1.0 + child_visits as f64) * c;
    stats.normalize(q) + exploration
}

/// Search tree stored as an arena; index 0 is the root.
#[derive(Clone, Debug)]
pub struct SearchTree {
    pub nodes: Vec<SearchNode>,
    pub stats: MinMaxStats,
}

impl SearchTree {
    fn expand(&mut self, idx: usize, latent: LatentState, reward: f64, priors: &[f64]) {
        let first = self.nodes.len();
        self.nodes.extend(priors.iter().map(|&p| SearchNode::new(p)));
        let node = &mut self.nodes[idx];
        node.latent = Some(latent);
        node.reward = reward;
        node.children = (first..first + priors.len()).collect();
    }

    /// Value of taking the edge into `child` as seen from its parent.
    fn child_q(&self, child: usize, discount: f64) -> f64 {
        let c = &self.nodes[child];
        c.reward + discount * c.value()
    }

    /// Picks the child maximising pUCT; unvisited children borrow the mean
    /// value of their visited siblings. Ties go to the lowest action id.
    fn select_child(&self, idx: usize, cfg: &SearchConfig) -> usize {
        let node = &self.nodes[idx];
        let (mut sum, mut count) = (0.0, 0usize);
        for &c in &node.children {
            if self.nodes[c].visit_count > 0 {
                sum += self.child_q(c, cfg.discount);
                count += 1;
            }
        }
        let unvisited_q = if count > 0 { sum / count as f64 } else { 0.0 };
        let parent_visits = node.visit_count.max(1);
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (action, &c) in node.children.iter().enumerate() {
            let child = &self.nodes[c];
            let q = if child.visit_count > 0 {
                self.child_q(c, cfg.discount)
            } else {
                unvisited_q
            };
            let score = puct_score(
                child.prior,
                child.visit_count,
                q,
                parent_visits,
                &self.stats,
                cfg.pb_c_init,
                cfg.pb_c_base,
            );
            if score > best_score {
                best_score = score;
                best = action;
            }
        }
        best
    }
}

/// Propagates `leaf_value` from the last node of `path` to the root:
/// every node adds the return seen from itself, `G ← reward + γ·G`.
pub fn backup(nodes: &mut [SearchNode], path: &[usize], leaf_value: f64, discount: f64, stats: &mut MinMaxStats) {
    let mut g = leaf_value;
    for &idx in path.iter().rev() {
        let node = &mut nodes[idx];
        node.value_sum += g;
        node.visit_count += 1;
        stats.update(node.reward + discount * node.value());
        g = node.reward + discount * g;
    }
}

fn dirichlet<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive alpha");
    let mut xs: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = xs.iter().sum();
    if sum > 0.0 {
        xs.iter_mut().for_each(|x| *x /= sum);
    } else {
        xs.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    xs
}

/// Visit counts raised to `1/temperature` and normalised; temperature 0 is
/// a one-hot argmax (lowest id on ties).
pub fn visit_policy(counts: &[u32], temperature: f64) -> Vec<f64> {
    let n = counts.len();
    let argmax = argmax_lowest(counts);
    let total: u32 = counts.iter().sum();
    if temperature <= 0.0 || total == 0 {
        let mut p = vec![0.0; n];
        p[argmax] = 1.0;
        return p;
    }
    let max = counts[argmax] as f64;
    let weights: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / max).powf(1.0 / temperature))
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / sum).collect()
}

fn argmax_lowest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Draws an action from a distribution.
pub fn sample_action<R: Rng + ?Sized>(policy: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &p) in policy.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    policy.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Builds a tree from the root observation and runs `num_simulations`
/// select → expand → backup passes.
pub fn search_tree<R: Rng + ?Sized>(
    model: &WorldModel,
    root_obs: &[f64],
    cfg: &SearchConfig,
    rng: &mut R,
) -> Result<SearchTree> {
    if cfg.num_simulations == 0 {
        return Err(Error::Argument("search needs at least one simulation".into()));
    }
    let (root_latent, root_pred) = model.initial_inference(root_obs)?;
    let mut priors = root_pred.policy;
    if let Some(noise) = cfg.noise {
        if priors.len() > 1 && noise.ratio > 0.0 {
            let eta = dirichlet(noise.alpha, priors.len(), rng);
            for (p, n) in priors.iter_mut().zip(eta) {
                *p = (1.0 - noise.ratio) * *p + noise.ratio * n;
            }
        }
    }
    let mut tree = SearchTree {
        nodes: vec![SearchNode::new(1.0)],
        stats: MinMaxStats::default(),
    };
    tree.expand(0, root_latent, 0.0, &priors);

    let mut path = Vec::new();
    for _ in 0..cfg.num_simulations {
        path.clear();
        path.push(0);
        let mut idx = 0;
        let mut action = 0;
        while tree.nodes[idx].is_expanded() {
            action = tree.select_child(idx, cfg);
            idx = tree.nodes[idx].children[action];
            path.push(idx);
        }
        let parent = path[path.len() - 2];
        let parent_latent = tree.nodes[parent].latent.as_ref().expect("expanded node has latent");
        let (latent, reward) = model.dynamics(parent_latent, action)?;
        let pred = model.predict(&latent)?;
        tree.expand(idx, latent, reward, &pred.policy);
        let mut stats = tree.stats;
        backup(&mut tree.nodes, &path, pred.value, cfg.discount, &mut stats);
        tree.stats = stats;
    }
    Ok(tree)
}

/// Full search returning the root statistics.
pub fn run_search<R: Rng + ?Sized>(
    model: &WorldModel,
    root_obs: &[f64],
    cfg: &SearchConfig,
    temperature: f64,
    rng: &mut R,
) -> Result<SearchResult> {
    let tree = search_tree(model, root_obs, cfg, rng)?;
    let root = &tree.nodes[0];
    let visit_counts: Vec<u32> = root.children.iter().map(|&c| tree.nodes[c].visit_count).collect();
    Ok(SearchResult {
        policy_target: visit_policy(&visit_counts, temperature),
        root_value: root.value(),
        chosen_action: argmax_lowest(&visit_counts),
        visit_counts,
    })
}

/// Visit-temperature schedule keyed on training progress: 1.0 for the first
/// half, 0.5 until three quarters, 0.25 afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureSchedule {
    /// `(progress threshold, temperature)` pairs in increasing threshold order;
    /// the temperature of the first threshold not yet reached applies.
    pub stages: Vec<(f64, f64)>,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            stages: vec![(0.5, 1.0), (0.75, 0.5), (f64::INFINITY, 0.25)],
        }
    }
}

impl TemperatureSchedule {
    pub fn temperature(&self, progress: f64) -> f64 {
        self.stages
            .iter()
            .find(|(threshold, _)| progress < *threshold)
            .or(self.stages.last())
            .map_or(1.0, |&(_, t)| t)
    }
}
