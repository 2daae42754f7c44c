//! Toy grid task families: a maze family (walls, pellets, hazards) and a
//! gauntlet family (bottom-row shooter against descending enemies).
//!
//! Every variant of every family shares one observation layout (`planes ×
//! grid²` per frame, `stack` frames) and one padded action space, so a single
//! world model can be trained across tasks. Actions a family does not use act
//! as "stay".

mod gauntlet;
mod maze;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use gauntlet::GauntletParams;
pub use maze::MazeParams;

/// Shared, padded action space (the maze family's five moves).
pub const ACTION_COUNT: usize = 5;
pub const DEFAULT_GRID: usize = 7;
pub const DEFAULT_PLANES: usize = 3;
pub const DEFAULT_STACK: usize = 2;
pub const DEFAULT_EPISODE_CAP: usize = 24;
/// Variant seeds at or above this value select extreme parameterisations.
pub const EXTREME_VARIANT_BASE: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Maze,
    Gauntlet,
}

impl Family {
    /// Actions the family actually distinguishes.
    pub fn legal_actions(self) -> usize {
        match self {
            Family::Maze => 5,
            Family::Gauntlet => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Maze => "maze",
            Family::Gauntlet => "gauntlet",
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maze" => Ok(Family::Maze),
            "gauntlet" => Ok(Family::Gauntlet),
            other => Err(Error::Config(format!("unknown task family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EnvSpec {
    pub family: Family,
    pub variant_seed: u64,
    pub grid: usize,
    pub episode_cap: usize,
    pub plane_count: usize,
    pub stack: usize,
}

impl EnvSpec {
    pub fn new(family: Family, variant_seed: u64) -> Self {
        Self {
            family,
            variant_seed,
            grid: DEFAULT_GRID,
            episode_cap: DEFAULT_EPISODE_CAP,
            plane_count: DEFAULT_PLANES,
            stack: DEFAULT_STACK,
        }
    }

    pub fn maze(variant_seed: u64) -> Self {
        Self::new(Family::Maze, variant_seed)
    }

    pub fn gauntlet(variant_seed: u64) -> Self {
        Self::new(Family::Gauntlet, variant_seed)
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = grid;
        self
    }

    pub fn with_episode_cap(mut self, cap: usize) -> Self {
        self.episode_cap = cap;
        self
    }

    pub fn with_stack(mut self, stack: usize) -> Self {
        self.stack = stack;
        self
    }

    /// Short task name, `family:variant`.
    pub fn task_id(&self) -> String {
        format!("{}:{}", self.family.name(), self.variant_seed)
    }

    /// Task name usable as a file stem.
    pub fn file_stem(&self) -> String {
        format!("{}-{}", self.family.name(), self.variant_seed)
    }

    pub fn frame_dim(&self) -> usize {
        self.plane_count * self.grid * self.grid
    }

    pub fn obs_dim(&self) -> usize {
        self.stack * self.frame_dim()
    }

    pub fn action_count(&self) -> usize {
        ACTION_COUNT
    }

    pub fn is_extreme(&self) -> bool {
        self.variant_seed >= EXTREME_VARIANT_BASE
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 4 {
            return Err(Error::Config(format!("grid {} too small (minimum 4)", self.grid)));
        }
        if self.plane_count != DEFAULT_PLANES {
            return Err(Error::Config(format!("plane count must be {DEFAULT_PLANES}")));
        }
        if self.stack == 0 || self.episode_cap == 0 {
            return Err(Error::Config("stack and episode cap must be positive".into()));
        }
        Ok(())
    }

    /// Bounds on any episode's return.
    pub fn return_bounds(&self) -> (f64, f64) {
        match self.family {
            Family::Maze => (-1.0, MazeParams::for_spec(self).pellets as f64),
            Family::Gauntlet => (-1.0, self.episode_cap as f64),
        }
    }

    fn variant_rng(&self) -> ChaCha8Rng {
        let salt = match self.family {
            Family::Maze => 0x6d61_7a65,
            Family::Gauntlet => 0x6761_756e,
        };
        ChaCha8Rng::seed_from_u64(self.variant_seed ^ (salt << 20) ^ (self.grid as u64) << 56)
    }
}

/// Full form: `family:variant[:grid=N][:cap=N][:stack=N]`.
impl fmt::Display for EnvSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:grid={}:cap={}:stack={}",
            self.family.name(),
            self.variant_seed,
            self.grid,
            self.episode_cap,
            self.stack
        )
    }
}

impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let family: Family = parts.next().unwrap_or_default().parse()?;
        let variant = parts
            .next()
            .ok_or_else(|| Error::Config(format!("task {s:?} lacks a variant (family:variant)")))?;
        let variant_seed = variant
            .parse()
            .map_err(|_| Error::Config(format!("bad variant {variant:?} in {s:?}")))?;
        let mut spec = EnvSpec::new(family, variant_seed);
        for part in parts {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad task option {part:?}")))?;
            let n: usize = value
                .parse()
                .map_err(|_| Error::Config(format!("bad number in task option {part:?}")))?;
            match key {
                "grid" => spec.grid = n,
                "cap" => spec.episode_cap = n,
                "stack" => spec.stack = n,
                _ => return Err(Error::Config(format!("unknown task option {key:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Game {
    Maze(maze::MazeState),
    Gauntlet(gauntlet::GauntletState),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Stacked observation after the step.
    pub obs: Vec<f64>,
    /// Clipped to `[-1, 1]`.
    pub reward: f64,
    pub terminal: bool,
}

/// One running episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Env {
    spec: EnvSpec,
    game: Game,
    history: VecDeque<Vec<f64>>,
    steps: usize,
    done: bool,
}

impl Env {
    /// Starts an episode; the returned observation is zero-padded to the full
    /// stack.
    pub fn reset<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Result<(Env, Vec<f64>)> {
        spec.validate()?;
        let mut variant_rng = spec.variant_rng();
        let game = match spec.family {
            Family::Maze => Game::Maze(maze::MazeState::reset(
                MazeParams::generate(spec, &mut variant_rng),
                spec.grid,
                rng,
            )),
            Family::Gauntlet => Game::Gauntlet(gauntlet::GauntletState::reset(
                GauntletParams::generate(spec, &mut variant_rng),
                spec.grid,
                rng,
            )),
        };
        let mut env = Env {
            spec: spec.clone(),
            game,
            history: VecDeque::with_capacity(spec.stack),
            steps: 0,
            done: false,
        };
        for _ in 1..spec.stack {
            env.history.push_back(vec![0.0; spec.frame_dim()]);
        }
        env.history.push_back(env.frame());
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// The current single frame.
    pub fn frame(&self) -> Vec<f64> {
        match &self.game {
            Game::Maze(m) => m.render(),
            Game::Gauntlet(g) => g.render(),
        }
    }

    /// The last `stack` frames, oldest first.
    pub fn observation(&self) -> Vec<f64> {
        self.history.iter().flatten().copied().collect()
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if action >= ACTION_COUNT {
            return Err(Error::Argument(format!("action {action} outside 0..{ACTION_COUNT}")));
        }
        if self.done {
            return Err(Error::Argument("step called on a finished episode".into()));
        }
        let (raw, mut terminal) = match &mut self.game {
            Game::Maze(m) => m.step(action),
            Game::Gauntlet(g) => g.step(action),
        };
        self.steps += 1;
        if self.steps >= self.spec.episode_cap {
            terminal = true;
        }
        self.done = terminal;
        self.history.pop_front();
        self.history.push_back(self.frame());
        Ok(StepOutcome {
            obs: self.observation(),
            reward: raw.clamp(-1.0, 1.0),
            terminal,
        })
    }
}

/// Concatenates frames `t+1-stack ..= t` (oldest first), zero-padding before
/// the episode start. `frames` is a flat `[T × frame_dim]` array.
pub fn stack_frames(frames: &[f64], frame_dim: usize, t: usize, stack: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(stack * frame_dim);
    for back in (0..stack).rev() {
        if back > t {
            out.extend(std::iter::repeat_n(0.0, frame_dim));
        } else {
            let i = t - back;
            out.extend_from_slice(&frames[i * frame_dim..(i + 1) * frame_dim]);
        }
    }
    out
}

pub(crate) fn cell(grid: usize, r: usize, c: usize) -> usize {
    r * grid + c
}
