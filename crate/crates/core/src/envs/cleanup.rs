//! Cleanup: a public-goods gridworld. Apples grow in the orchard only while
//! the river on the left edge is clean enough; cleaning pays nothing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{self, Cell};
use crate::error::{Error, Result};
use crate::mmdp::{AgentEvent, AgentLayout, EnvState, Environment, JointAction, SimRng, StepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleanupConfig {
    pub n_agents: usize,
    pub rows: usize,
    pub cols: usize,
    pub horizon: usize,
    /// The river occupies the leftmost `river_cols` columns.
    pub river_cols: usize,
    /// The orchard occupies the rightmost `orchard_cols` columns.
    pub orchard_cols: usize,
    pub waste_threshold: f64,
    /// Waste units added to the river per step.
    pub waste_rate: f64,
    pub apple_spawn_base: f64,
    pub initial_waste_density: f64,
    pub initial_apple_density: f64,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            rows: 11,
            cols: 18,
            horizon: 100,
            river_cols: 3,
            orchard_cols: 6,
            waste_threshold: 0.4,
            waste_rate: 0.5,
            apple_spawn_base: 0.05,
            initial_waste_density: 0.3,
            initial_apple_density: 0.2,
        }
    }
}

impl CleanupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.river_cols + self.orchard_cols > self.cols {
            return Err(Error::Config {
                field: "env.cleanup.river_cols".into(),
                message: "river and orchard overlap".into(),
            });
        }
        if self.n_agents == 0 || self.rows == 0 || self.river_cols == 0 || self.orchard_cols == 0 {
            return Err(Error::Config {
                field: "env.cleanup".into(),
                message: "agents, rows, river and orchard must be non-empty".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CleanupWorld {
    pub config: CleanupConfig,
    pub apples: Vec<bool>,
    pub waste: Vec<bool>,
    pub agents: Vec<Cell>,
    pub step_index: usize,
    waste_accumulator: f64,
}

impl CleanupWorld {
    pub fn new(config: CleanupConfig) -> Self {
        let cells = config.rows * config.cols;
        Self {
            apples: vec![false; cells],
            waste: vec![false; cells],
            agents: vec![(0, 0); config.n_agents],
            step_index: 0,
            waste_accumulator: 0.0,
            config,
        }
    }

    pub fn is_river(&self, cell: Cell) -> bool {
        (cell.1 as usize) < self.config.river_cols
    }

    pub fn is_orchard(&self, cell: Cell) -> bool {
        cell.1 as usize >= self.config.cols - self.config.orchard_cols
    }

    pub fn river_capacity(&self) -> usize {
        self.config.rows * self.config.river_cols
    }

    pub fn waste_density(&self) -> f64 {
        self.waste.iter().filter(|w| **w).count() as f64 / self.river_capacity() as f64
    }

    pub fn apple_count(&self) -> usize {
        self.apples.iter().filter(|a| **a).count()
    }

    /// Per-cell apple probability this step under the current waste level.
    pub fn spawn_probability(&self) -> f64 {
        let density = self.waste_density();
        if density >= self.config.waste_threshold {
            0.0
        } else {
            self.config.apple_spawn_base * (1.0 - density / self.config.waste_threshold).max(0.0)
        }
    }

    fn cells(&self) -> impl Iterator<Item = Cell> {
        let (rows, cols) = (self.config.rows as i64, self.config.cols as i64);
        (0..rows).flat_map(move |r| (0..cols).map(move |c| (r, c)))
    }

    pub fn state(&self) -> EnvState {
        let mut obs = Vec::with_capacity(self.observation_dim());
        obs.extend(self.apples.iter().map(|a| f64::from(u8::from(*a))));
        obs.extend(self.waste.iter().map(|w| f64::from(u8::from(*w))));
        for cell in &self.agents {
            grid::push_coords(&mut obs, *cell, self.config.rows, self.config.cols);
        }
        EnvState {
            observation: obs,
            step_index: self.step_index,
        }
    }

    fn add_waste(&mut self, rng: &mut SimRng) {
        let clean: Vec<usize> = self
            .cells()
            .filter(|c| self.is_river(*c))
            .map(|c| grid::index(c, self.config.cols))
            .filter(|&i| !self.waste[i])
            .collect();
        if !clean.is_empty() {
            let pick = clean[rng.random_range(0..clean.len())];
            self.waste[pick] = true;
        }
    }
}

impl Environment for CleanupWorld {
    fn name(&self) -> &'static str {
        "cleanup"
    }

    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn action_counts(&self) -> Vec<usize> {
        vec![grid::ACTION_COUNT; self.config.n_agents]
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn observation_dim(&self) -> usize {
        2 * self.config.rows * self.config.cols + 2 * self.config.n_agents
    }

    fn reset(&mut self, rng: &mut SimRng) -> EnvState {
        let cols = self.config.cols;
        self.apples.iter_mut().for_each(|a| *a = false);
        self.waste.iter_mut().for_each(|w| *w = false);
        let cells: Vec<Cell> = self.cells().collect();
        for cell in &cells {
            let idx = grid::index(*cell, cols);
            if self.is_river(*cell) {
                self.waste[idx] = rng.random_bool(self.config.initial_waste_density.clamp(0.0, 1.0));
            } else if self.is_orchard(*cell) {
                self.apples[idx] = rng.random_bool(self.config.initial_apple_density.clamp(0.0, 1.0));
            }
        }
        // Agents start on the land strip between river and orchard.
        let lo = self.config.river_cols as i64;
        let hi = (cols - self.config.orchard_cols) as i64;
        let rows = self.config.rows as i64;
        self.agents = (0..self.config.n_agents)
            .map(|_| {
                if hi > lo {
                    (rng.random_range(0..rows), rng.random_range(lo..hi))
                } else {
                    (rng.random_range(0..rows), lo.min(cols as i64 - 1))
                }
            })
            .collect();
        self.step_index = 0;
        self.waste_accumulator = 0.0;
        self.state()
    }

    fn step(&mut self, action: &JointAction, rng: &mut SimRng) -> Result<StepOutcome> {
        self.validate_action(action)?;
        let (rows, cols) = (self.config.rows, self.config.cols);
        let mut rewards = vec![0.0; self.config.n_agents];
        let mut events = vec![AgentEvent::default(); self.config.n_agents];
        for (i, a) in action.0.iter().enumerate() {
            let before = self.agents[i];
            let had_adjacent_apple = grid::neighbours(before, rows, cols).any(|c| self.apples[grid::index(c, cols)]);
            let next = grid::apply_move(before, *a, rows, cols);
            self.agents[i] = next;
            let idx = grid::index(next, cols);
            if next != before && self.apples[idx] {
                self.apples[idx] = false;
                rewards[i] = 1.0;
                events[i].ate_apple = true;
            } else if next != before && self.waste[idx] {
                self.waste[idx] = false;
                events[i].cleaned_waste = true;
            }
            events[i].passed_up_apple = had_adjacent_apple && !events[i].ate_apple;
        }

        self.waste_accumulator += self.config.waste_rate;
        while self.waste_accumulator >= 1.0 {
            self.waste_accumulator -= 1.0;
            self.add_waste(rng);
        }

        let p = self.spawn_probability();
        if p > 0.0 {
            let occupied: Vec<usize> = self.agents.iter().map(|c| grid::index(*c, cols)).collect();
            let orchard: Vec<Cell> = self.cells().filter(|c| self.is_orchard(*c)).collect();
            for cell in orchard {
                let idx = grid::index(cell, cols);
                if !self.apples[idx] && !occupied.contains(&idx) && rng.random_bool(p) {
                    self.apples[idx] = true;
                }
            }
        }

        self.step_index += 1;
        Ok(StepOutcome {
            next_state: self.state(),
            rewards,
            terminal: self.step_index >= self.config.horizon,
            events,
        })
    }

    fn layout(&self, state: &EnvState) -> AgentLayout {
        let (rows, cols) = (self.config.rows, self.config.cols);
        AgentLayout::Grid {
            cells: decode_coords(&state.observation[2 * rows * cols..], rows, cols),
            rows,
            cols,
        }
    }

    fn render_ascii(&self) -> String {
        let mut out = String::new();
        for r in 0..self.config.rows as i64 {
            for c in 0..self.config.cols as i64 {
                let idx = grid::index((r, c), self.config.cols);
                let ch = if let Some(i) = self.agents.iter().position(|a| *a == (r, c)) {
                    std::char::from_digit((i % 10) as u32, 10).unwrap_or('#')
                } else if self.apples[idx] {
                    'A'
                } else if self.waste[idx] {
                    '~'
                } else if self.is_river((r, c)) {
                    '='
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

/// Inverts [`grid::push_coords`] for a run of agent coordinates.
pub(crate) fn decode_coords(coords: &[f64], rows: usize, cols: usize) -> Vec<Cell> {
    coords
        .chunks(2)
        .map(|rc| {
            (
                (rc[0] * (rows.max(2) - 1) as f64).round() as i64,
                (rc[1] * (cols.max(2) - 1) as f64).round() as i64,
            )
        })
        .collect()
}
