//! Acting in an environment with search: self-play, data collection and
//! evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::mcts::{run_search, sample_action, visit_policy, SearchConfig};
use crate::model::WorldModel;
use crate::replay::Trajectory;

/// One environment driven step by step, recording a trajectory.
pub struct Actor {
    env: Env,
    obs: Vec<f64>,
    trajectory: Trajectory,
    episode_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinishedEpisode {
    pub trajectory: Trajectory,
    pub episode_return: f64,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, env_rng: &mut R) -> Result<Self> {
        let (env, obs) = Env::reset(spec, env_rng)?;
        let trajectory = Trajectory::new(&spec.task_id(), spec.frame_dim(), spec.action_count(), env.frame());
        Ok(Self {
            env,
            obs,
            trajectory,
            episode_return: 0.0,
        })
    }

    /// Searches from the current observation, acts with the visit
    /// distribution at `temperature`, and returns the episode if it ended.
    /// The stored policy target is the untempered visit distribution.
    pub fn step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        model: &WorldModel,
        search: &SearchConfig,
        temperature: f64,
        env_rng: &mut R1,
        search_rng: &mut R2,
    ) -> Result<Option<FinishedEpisode>> {
        let result = run_search(model, &self.obs, search, temperature, search_rng)?;
        let action = if temperature <= 0.0 {
            result.chosen_action
        } else {
            sample_action(&result.policy_target, search_rng)
        };
        let outcome = self.env.step(action)?;
        self.episode_return += outcome.reward;
        let target = visit_policy(&result.visit_counts, 1.0);
        self.trajectory
            .push(action, outcome.reward, &target, result.root_value, &self.env.frame());
        self.obs = outcome.obs;
        if !outcome.terminal {
            return Ok(None);
        }
        let spec = self.env.spec().clone();
        let next = Actor::new(&spec, env_rng)?;
        let done = std::mem::replace(self, next);
        Ok(Some(FinishedEpisode {
            trajectory: done.trajectory,
            episode_return: done.episode_return,
        }))
    }
}

/// Plays one full episode.
pub fn play_episode<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    model: &WorldModel,
    spec: &EnvSpec,
    search: &SearchConfig,
    temperature: f64,
    env_rng: &mut R1,
    search_rng: &mut R2,
) -> Result<FinishedEpisode> {
    let mut actor = Actor::new(spec, env_rng)?;
    loop {
        if let Some(ep) = actor.step(model, search, temperature, env_rng, search_rng)? {
            return Ok(ep);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub returns: Vec<f64>,
}

/// Greedy noise-free search play, one episode per seed.
pub fn evaluate_with_seeds(model: &WorldModel, spec: &EnvSpec, search: &SearchConfig, seeds: &[u64]) -> Result<EvalSummary> {
    if seeds.is_empty() {
        return Err(Error::Argument("evaluation needs at least one episode".into()));
    }
    let search = search.without_noise();
    let mut returns = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ep = play_episode(model, spec, &search, 0.0, &mut rng.clone(), &mut rng)?;
        returns.push(ep.episode_return);
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(EvalSummary { mean_return, returns })
}

/// Mean return over `episodes` greedy episodes whose seeds come from `rng`.
pub fn evaluate<R: Rng + ?Sized>(
    model: &WorldModel,
    spec: &EnvSpec,
    episodes: usize,
    search: &SearchConfig,
    rng: &mut R,
) -> Result<EvalSummary> {
    let seeds: Vec<u64> = (0..episodes).map(|_| rng.random()).collect();
    evaluate_with_seeds(model, spec, search, &seeds)
}
