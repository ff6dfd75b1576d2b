//! Harvest: a commons gridworld where apples regrow in proportion to the
//! number of live apples nearby. A patch eaten bare never recovers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cleanup::decode_coords;
use super::grid::{self, Cell};
use crate::error::{Error, Result};
use crate::mmdp::{AgentEvent, AgentLayout, EnvState, Environment, JointAction, SimRng, StepOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarvestConfig {
    pub n_agents: usize,
    pub rows: usize,
    pub cols: usize,
    pub horizon: usize,
    /// Chebyshev radius counted for regrowth.
    pub respawn_radius: i64,
    /// Regrowth probability per nearby live apple.
    pub rate_coeff: f64,
    /// Apple patches are diamonds of this Manhattan radius.
    pub patch_radius: i64,
    /// Column spacing between patch centres.
    pub patch_spacing: usize,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            rows: 7,
            cols: 38,
            horizon: 100,
            respawn_radius: 2,
            rate_coeff: 0.01,
            patch_radius: 2,
            patch_spacing: 6,
        }
    }
}

impl HarvestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.rows == 0 || self.cols == 0 || self.patch_spacing == 0 {
            return Err(Error::Config {
                field: "env.harvest".into(),
                message: "agents, grid size and patch spacing must be positive".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.rate_coeff) {
            return Err(Error::Config {
                field: "env.harvest.rate_coeff".into(),
                message: "must lie in [0,1]".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HarvestWorld {
    pub config: HarvestConfig,
    /// Cells where apples can grow.
    pub sites: Vec<bool>,
    pub apples: Vec<bool>,
    pub agents: Vec<Cell>,
    pub step_index: usize,
}

impl HarvestWorld {
    pub fn new(config: HarvestConfig) -> Self {
        let (rows, cols) = (config.rows as i64, config.cols as i64);
        let mut sites = vec![false; config.rows * config.cols];
        let centre_row = rows / 2;
        let spacing = config.patch_spacing as i64;
        let mut centre_col = spacing / 2;
        while centre_col < cols {
            for r in 0..rows {
                for c in 0..cols {
                    if grid::manhattan((r, c), (centre_row, centre_col)) <= config.patch_radius {
                        sites[grid::index((r, c), config.cols)] = true;
                    }
                }
            }
            centre_col += spacing;
        }
        Self {
            apples: sites.clone(),
            sites,
            agents: vec![(0, 0); config.n_agents],
            step_index: 0,
            config,
        }
    }

    pub fn apple_count(&self) -> usize {
        self.apples.iter().filter(|a| **a).count()
    }

    pub fn site_count(&self) -> usize {
        self.sites.iter().filter(|s| **s).count()
    }

    /// Live apples within the respawn radius of `cell` (excluding it).
    pub fn nearby_apples(&self, cell: Cell) -> usize {
        let rad = self.config.respawn_radius;
        let (rows, cols) = (self.config.rows as i64, self.config.cols as i64);
        let mut count = 0;
        for r in (cell.0 - rad).max(0)..=(cell.0 + rad).min(rows - 1) {
            for c in (cell.1 - rad).max(0)..=(cell.1 + rad).min(cols - 1) {
                if (r, c) != cell && self.apples[grid::index((r, c), self.config.cols)] {
                    count += 1;
                }
            }
        }
        count
    }

    /// Regrowth probability of an empty site this step.
    pub fn respawn_probability(&self, cell: Cell) -> f64 {
        (self.config.rate_coeff * self.nearby_apples(cell) as f64).min(1.0)
    }

    pub fn state(&self) -> EnvState {
        let mut obs = Vec::with_capacity(self.observation_dim());
        obs.extend(self.apples.iter().map(|a| f64::from(u8::from(*a))));
        for cell in &self.agents {
            grid::push_coords(&mut obs, *cell, self.config.rows, self.config.cols);
        }
        EnvState {
            observation: obs,
            step_index: self.step_index,
        }
    }
}

impl Environment for HarvestWorld {
    fn name(&self) -> &'static str {
        "harvest"
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
        self.config.rows * self.config.cols + 2 * self.config.n_agents
    }

    fn reset(&mut self, rng: &mut SimRng) -> EnvState {
        self.apples.copy_from_slice(&self.sites);
        let free: Vec<Cell> = (0..self.config.rows as i64)
            .flat_map(|r| (0..self.config.cols as i64).map(move |c| (r, c)))
            .filter(|c| !self.sites[grid::index(*c, self.config.cols)])
            .collect();
        self.agents = (0..self.config.n_agents)
            .map(|_| free[rng.random_range(0..free.len())])
            .collect();
        self.step_index = 0;
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
            }
            events[i].passed_up_apple = had_adjacent_apple && !events[i].ate_apple;
        }

        // Regrowth reads the post-harvest field and writes a fresh one.
        let occupied: Vec<usize> = self.agents.iter().map(|c| grid::index(*c, cols)).collect();
        let mut grown = self.apples.clone();
        for r in 0..rows as i64 {
            for c in 0..cols as i64 {
                let idx = grid::index((r, c), cols);
                if self.sites[idx] && !self.apples[idx] && !occupied.contains(&idx) {
                    let p = self.respawn_probability((r, c));
                    if p > 0.0 && rng.random_bool(p) {
                        grown[idx] = true;
                    }
                }
            }
        }
        self.apples = grown;

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
            cells: decode_coords(&state.observation[rows * cols..], rows, cols),
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
                } else if self.sites[idx] {
                    ','
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdp::sim_rng;

    #[test]
    fn eating_pays_one() {
        let mut w = HarvestWorld::new(HarvestConfig::default());
        w.reset(&mut sim_rng(0));
        // the first patch centre is (3, 3); approach from (3, 0) -> (3, 1) is a site
        let target = (3, 1);
        assert!(w.sites[grid::index(target, 38)]);
        w.agents = vec![(3, 0), (0, 37), (6, 37), (0, 36)];
        let out = w.step(&JointAction(vec![3, 4, 4, 4]), &mut sim_rng(1)).unwrap();
        assert_eq!(out.rewards, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(!w.apples[grid::index(target, 38)]);
    }

    #[test]
    fn respawn_rate_is_linear_in_nearby_apples() {
        let mut w = HarvestWorld::new(HarvestConfig::default());
        w.apples.iter_mut().for_each(|a| *a = false);
        let centre = (3, 3);
        for cell in [(3, 4), (2, 3), (4, 4)] {
            w.apples[grid::index(cell, 38)] = true;
        }
        assert_eq!(w.nearby_apples(centre), 3);
        assert!((w.respawn_probability(centre) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn stripped_region_never_regrows() {
        let mut w = HarvestWorld::new(HarvestConfig::default());
        w.reset(&mut sim_rng(3));
        w.apples.iter_mut().for_each(|a| *a = false);
        w.agents = vec![(0, 0); 4];
        let mut rng = sim_rng(4);
        for _ in 0..200 {
            w.step(&JointAction(vec![4; 4]), &mut rng).unwrap();
        }
        assert_eq!(w.apple_count(), 0);
    }

    #[test]
    fn apples_never_exceed_sites() {
        let mut w = HarvestWorld::new(HarvestConfig::default());
        let mut rng = sim_rng(5);
        w.reset(&mut rng);
        for t in 0..100 {
            let acts: Vec<usize> = (0..4).map(|i| (t * 3 + i) % 5).collect();
            w.step(&JointAction(acts), &mut rng).unwrap();
            assert!(w.apples.iter().zip(&w.sites).all(|(a, s)| !a || *s));
        }
    }
}
