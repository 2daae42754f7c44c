use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{cell, EnvSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct GauntletParams {
    /// Enemies descend one row every `speed` ticks.
    pub speed: usize,
    /// A new enemy appears every `spawn_interval` ticks.
    pub spawn_interval: usize,
    pub spawn_columns: Vec<usize>,
}

impl GauntletParams {
    pub fn for_spec(spec: &EnvSpec) -> Self {
        Self::generate(spec, &mut spec.variant_rng())
    }

    pub(super) fn generate<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Self {
        let n = spec.grid;
        if spec.is_extreme() {
            return Self {
                speed: 1,
                spawn_interval: 1,
                spawn_columns: (0..n).collect(),
            };
        }
        let speed = rng.random_range(1..=2);
        let spawn_interval = rng.random_range(2..=3);
        let width = rng.random_range(n.div_ceil(2)..=n);
        let start = rng.random_range(0..=n - width);
        Self {
            speed,
            spawn_interval,
            spawn_columns: (start..start + width).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(super) struct GauntletState {
    params: GauntletParams,
    grid: usize,
    agent_col: usize,
    /// `(row, col)`, row 0 at the top.
    enemies: Vec<(usize, usize)>,
    tick: usize,
    shot: Option<usize>,
    rng: ChaCha8Rng,
}

impl GauntletState {
    pub fn reset<R: Rng + ?Sized>(params: GauntletParams, grid: usize, rng: &mut R) -> Self {
        let agent_col = rng.random_range(0..grid);
        let mut s = Self {
            params,
            grid,
            agent_col,
            enemies: Vec::new(),
            tick: 0,
            shot: None,
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
        };
        s.spawn();
        s
    }

    fn spawn(&mut self) {
        let col = *self.params.spawn_columns.choose(&mut self.rng).expect("spawn columns");
        if !self.enemies.contains(&(0, col)) {
            self.enemies.push((0, col));
        }
    }

    /// Actions: 0 left, 1 right, 2 fire, anything else stays.
    pub fn step(&mut self, action: usize) -> (f64, bool) {
        let mut reward = 0.0;
        let mut terminal = false;
        self.shot = None;
        match action {
            0 if self.agent_col > 0 => self.agent_col -= 1,
            1 if self.agent_col + 1 < self.grid => self.agent_col += 1,
            2 => {
                self.shot = Some(self.agent_col);
                let lowest = self
                    .enemies
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.1 == self.agent_col)
                    .max_by_key(|(_, e)| e.0)
                    .map(|(i, _)| i);
                if let Some(i) = lowest {
                    self.enemies.remove(i);
                    reward += 1.0;
                }
            }
            _ => {}
        }
        self.tick += 1;
        if self.tick % self.params.speed == 0 {
            for e in &mut self.enemies {
                e.0 += 1;
            }
            let before = self.enemies.len();
            let bottom = self.grid - 1;
            self.enemies.retain(|e| e.0 < bottom);
            if self.enemies.len() < before {
                reward -= 1.0;
                terminal = true;
            }
        }
        if self.tick % self.params.spawn_interval == 0 {
            self.spawn();
        }
        (reward, terminal)
    }

    /// Planes: enemies, agent, shot trace.
    pub fn render(&self) -> Vec<f64> {
        let n = self.grid;
        let cells = n * n;
        let mut f = vec![0.0; 3 * cells];
        for &(r, c) in &self.enemies {
            f[cell(n, r, c)] = 1.0;
        }
        f[cells + cell(n, n - 1, self.agent_col)] = 1.0;
        if let Some(c) = self.shot {
            for r in 0..n - 1 {
                f[2 * cells + cell(n, r, c)] = 1.0;
            }
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(enemies: Vec<(usize, usize)>, agent_col: usize) -> GauntletState {
        GauntletState {
            params: GauntletParams {
                speed: 2,
                spawn_interval: 100,
                spawn_columns: vec![0],
            },
            grid: 5,
            agent_col,
            enemies,
            tick: 0,
            shot: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    #[test]
    fn fire_hits_lowest_enemy_in_column() {
        let mut s = state(vec![(0, 2), (2, 2), (1, 3)], 2);
        assert_eq!(s.step(2), (1.0, false));
        assert_eq!(s.enemies, vec![(0, 2), (1, 3)]);
    }

    #[test]
    fn missing_shot_pays_nothing() {
        let mut s = state(vec![(1, 3)], 0);
        assert_eq!(s.step(2), (0.0, false));
    }

    #[test]
    fn breach_is_fatal() {
        let mut s = state(vec![(3, 1)], 4);
        assert_eq!(s.step(3), (0.0, false)); // tick 1: no descent at speed 2
        assert_eq!(s.step(3), (-1.0, true));
    }

    #[test]
    fn movement_clamps_at_edges() {
        let mut s = state(vec![], 0);
        s.step(0);
        assert_eq!(s.agent_col, 0);
        s.step(1);
        assert_eq!(s.agent_col, 1);
        s.step(4);
        assert_eq!(s.agent_col, 1);
    }
}
