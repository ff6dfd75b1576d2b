//! Cooperative navigation on a small grid: each agent owns a landmark and
//! is penalised for distance to it and for sharing a cell.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::cleanup::decode_coords;
use super::grid::{self, Cell};
use crate::error::{Error, Result};
use crate::mmdp::{AgentEvent, AgentLayout, EnvState, Environment, JointAction, SimRng, StepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavigationConfig {
    pub n_agents: usize,
    pub size: usize,
    pub horizon: usize,
    pub collision_penalty: f64,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            n_agents: 3,
            size: 5,
            horizon: 100,
            collision_penalty: 1.0,
        }
    }
}

impl NavigationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 2 || self.n_agents == 0 || 2 * self.n_agents > self.size * self.size {
            return Err(Error::Config {
                field: "env.navigation".into(),
                message: "grid must hold every agent and landmark in distinct cells".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NavigationWorld {
    pub config: NavigationConfig,
    pub agents: Vec<Cell>,
    /// `landmarks[i]` belongs to agent i.
    pub landmarks: Vec<Cell>,
    pub step_index: usize,
}

impl NavigationWorld {
    pub fn new(config: NavigationConfig) -> Self {
        let n = config.n_agents;
        Self {
            agents: vec![(0, 0); n],
            landmarks: vec![(0, 0); n],
            step_index: 0,
            config,
        }
    }

    /// Largest Manhattan distance on the grid.
    pub fn max_distance(&self) -> f64 {
        2.0 * (self.config.size - 1) as f64
    }

    pub fn rewards_for(&self, cells: &[Cell]) -> Vec<f64> {
        cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let dist = grid::manhattan(*cell, self.landmarks[i]) as f64 / self.max_distance();
                let collided = cells.iter().enumerate().any(|(j, other)| j != i && other == cell);
                -dist - if collided { self.config.collision_penalty } else { 0.0 }
            })
            .collect()
    }

    pub fn state(&self) -> EnvState {
        let size = self.config.size;
        let mut obs = Vec::with_capacity(self.observation_dim());
        for cell in self.agents.iter().chain(&self.landmarks) {
            grid::push_coords(&mut obs, *cell, size, size);
        }
        EnvState {
            observation: obs,
            step_index: self.step_index,
        }
    }
}

impl Environment for NavigationWorld {
    fn name(&self) -> &'static str {
        "navigation"
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
        4 * self.config.n_agents
    }

    fn reset(&mut self, rng: &mut SimRng) -> EnvState {
        let size = self.config.size;
        let n = self.config.n_agents;
        let to_cell = |k: usize| ((k / size) as i64, (k % size) as i64);
        let landmarks = sample(rng, size * size, n);
        self.landmarks = landmarks.iter().map(to_cell).collect();
        let agents = sample(rng, size * size, n);
        self.agents = agents.iter().map(to_cell).collect();
        self.step_index = 0;
        self.state()
    }

    fn step(&mut self, action: &JointAction, _rng: &mut SimRng) -> Result<StepOutcome> {
        self.validate_action(action)?;
        let size = self.config.size;
        for (cell, a) in self.agents.iter_mut().zip(&action.0) {
            *cell = grid::apply_move(*cell, *a, size, size);
        }
        self.step_index += 1;
        Ok(StepOutcome {
            next_state: self.state(),
            rewards: self.rewards_for(&self.agents),
            terminal: self.step_index >= self.config.horizon,
            events: vec![AgentEvent::default(); self.config.n_agents],
        })
    }

    fn layout(&self, state: &EnvState) -> AgentLayout {
        let size = self.config.size;
        AgentLayout::Grid {
            cells: decode_coords(&state.observation[..2 * self.config.n_agents], size, size),
            rows: size,
            cols: size,
        }
    }

    fn render_ascii(&self) -> String {
        let size = self.config.size as i64;
        let mut out = String::new();
        for r in 0..size {
            for c in 0..size {
                let ch = if let Some(i) = self.agents.iter().position(|a| *a == (r, c)) {
                    std::char::from_digit((i % 10) as u32, 10).unwrap_or('#')
                } else if let Some(i) = self.landmarks.iter().position(|l| *l == (r, c)) {
                    (b'a' + (i % 26) as u8) as char
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
