use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{cell, EnvSpec};

/// Level layout fixed by the variant seed; only the agent's start varies
/// between episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeParams {
    pub walls: Vec<bool>,
    pub pellets: usize,
    pub hazards: usize,
    pub pellet_cells: Vec<usize>,
    pub hazard_cells: Vec<usize>,
}

impl MazeParams {
    pub fn for_spec(spec: &EnvSpec) -> Self {
        Self::generate(spec, &mut spec.variant_rng())
    }

    pub(super) fn generate<R: Rng + ?Sized>(spec: &EnvSpec, rng: &mut R) -> Self {
        let n = spec.grid;
        let (wall_count, pellets, hazards) = if spec.is_extreme() {
            (2 * (n - 2), 1, 2)
        } else {
            (n - 2, 3, 1)
        };
        let cells: Vec<usize> = (0..n * n).collect();
        loop {
            let mut walls = vec![false; n * n];
            for &c in cells.choose_multiple(rng, wall_count) {
                walls[c] = true;
            }
            let mut free: Vec<usize> = (0..n * n).filter(|&c| !walls[c]).collect();
            if free.len() >= pellets + hazards + 2 && connected(&walls, n) {
                free.shuffle(rng);
                return Self {
                    pellet_cells: free[..pellets].to_vec(),
                    hazard_cells: free[pellets..pellets + hazards].to_vec(),
                    walls,
                    pellets,
                    hazards,
                };
            }
        }
    }
}

fn connected(walls: &[bool], n: usize) -> bool {
    let Some(start) = walls.iter().position(|w| !w) else {
        return false;
    };
    let mut seen = vec![false; n * n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(c) = queue.pop_front() {
        let (r, col) = (c / n, c % n);
        let neighbours = [
            (r > 0).then(|| c - n),
            (r + 1 < n).then(|| c + n),
            (col > 0).then(|| c - 1),
            (col + 1 < n).then(|| c + 1),
        ];
        for nb in neighbours.into_iter().flatten() {
            if !walls[nb] && !seen[nb] {
                seen[nb] = true;
                count += 1;
                queue.push_back(nb);
            }
        }
    }
    count == walls.iter().filter(|w| !**w).count()
}

#[derive(Clone, Debug, PartialEq)]
pub(super) struct MazeState {
    params: MazeParams,
    grid: usize,
    agent: usize,
    pellets: Vec<bool>,
    hazards: Vec<bool>,
}

impl MazeState {
    pub fn reset<R: Rng + ?Sized>(params: MazeParams, grid: usize, rng: &mut R) -> Self {
        let mut pellets = vec![false; grid * grid];
        let mut hazards = vec![false; grid * grid];
        for &c in &params.pellet_cells {
            pellets[c] = true;
        }
        for &c in &params.hazard_cells {
            hazards[c] = true;
        }
        let starts: Vec<usize> = (0..grid * grid)
            .filter(|&c| !params.walls[c] && !pellets[c] && !hazards[c])
            .collect();
        let agent = *starts.choose(rng).expect("layouts keep two spare cells");
        Self {
            params,
            grid,
            agent,
            pellets,
            hazards,
        }
    }

    /// Actions: 0 up, 1 down, 2 left, 3 right, 4 stay.
    pub fn step(&mut self, action: usize) -> (f64, bool) {
        let n = self.grid;
        let (r, c) = (self.agent / n, self.agent % n);
        let target = match action {
            0 if r > 0 => Some(cell(n, r - 1, c)),
            1 if r + 1 < n => Some(cell(n, r + 1, c)),
            2 if c > 0 => Some(cell(n, r, c - 1)),
            3 if c + 1 < n => Some(cell(n, r, c + 1)),
            _ => None,
        };
        if let Some(t) = target {
            if !self.params.walls[t] {
                self.agent = t;
            }
        }
        if self.hazards[self.agent] {
            return (-1.0, true);
        }
        if self.pellets[self.agent] {
            self.pellets[self.agent] = false;
            let done = !self.pellets.iter().any(|&p| p);
            return (1.0, done);
        }
        (0.0, false)
    }

    /// Planes: walls, agent, items (pellet +1, hazard −1).
    pub fn render(&self) -> Vec<f64> {
        let cells = self.grid * self.grid;
        let mut f = vec![0.0; 3 * cells];
        for c in 0..cells {
            if self.params.walls[c] {
                f[c] = 1.0;
            }
            if self.pellets[c] {
                f[2 * cells + c] = 1.0;
            }
            if self.hazards[c] {
                f[2 * cells + c] = -1.0;
            }
        }
        f[cells + self.agent] = 1.0;
        f
    }
}
