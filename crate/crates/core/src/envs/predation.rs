//! Cooperative predation: predators on a segment choose to approach a static
//! prey or not, with Prisoner's-Dilemma payoffs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mmdp::{AgentEvent, AgentLayout, EnvState, Environment, JointAction, SimRng, StepOutcome};

/// Action 0 moves left (−1), action 1 moves right (+1).
pub const ACTION_COUNT: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredationConfig {
    pub n_agents: usize,
    pub horizon: usize,
    /// The segment is `[0, length]`.
    pub length: f64,
    pub step_size: f64,
}

impl Default for PredationConfig {
    fn default() -> Self {
        Self {
            n_agents: 8,
            horizon: 30,
            length: 30.0,
            step_size: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Move {
    Cooperate,
    Defect,
}

/// Movement direction of an action index.
pub fn direction(action: usize) -> f64 {
    if action == 0 {
        -1.0
    } else {
        1.0
    }
}

/// The action index heading towards the prey from `offset = x_agent − x_prey`,
/// or `None` when the agent sits exactly on the prey.
pub fn toward_action(offset: f64) -> Option<usize> {
    if offset > 0.0 {
        Some(0)
    } else if offset < 0.0 {
        Some(1)
    } else {
        None
    }
}

/// Cooperate iff the move heads towards the prey. Sitting on the prey
/// counts as a tie, which is a defection.
pub fn classify(offset: f64, action: usize) -> Move {
    match toward_action(offset) {
        Some(a) if a == action => Move::Cooperate,
        _ => Move::Defect,
    }
}

/// Per-agent payoffs for a cooperate/defect profile.
pub fn payoffs(moves: &[Move]) -> Vec<f64> {
    let n = moves.len() as f64;
    let cooperators = moves.iter().filter(|m| **m == Move::Cooperate).count();
    if cooperators == moves.len() {
        vec![-1.0; moves.len()]
    } else if cooperators == 0 {
        vec![-(2.0 * n - 1.0); moves.len()]
    } else {
        moves
            .iter()
            .map(|m| if *m == Move::Cooperate { -2.0 * n } else { 0.0 })
            .collect()
    }
}

/// Outcome of enumerating every cooperate/defect profile for `n` agents.
#[derive(Clone, Debug, PartialEq)]
pub struct DilemmaReport {
    pub n_agents: usize,
    pub profiles_checked: usize,
    /// All-cooperate strictly beats every other profile collectively.
    pub cooperation_optimal: bool,
    /// Switching any single agent from C to D strictly raises its payoff.
    pub defection_dominant: bool,
}

impl DilemmaReport {
    pub fn holds(&self) -> bool {
        self.cooperation_optimal && self.defection_dominant
    }
}

/// Exhaustively checks the Prisoner's-Dilemma structure of [`payoffs`].
pub fn check_dilemma(n: usize) -> DilemmaReport {
    let profile = |mask: usize| -> Vec<Move> {
        (0..n)
            .map(|i| if mask >> i & 1 == 1 { Move::Cooperate } else { Move::Defect })
            .collect()
    };
    let all_c: f64 = payoffs(&vec![Move::Cooperate; n]).iter().sum();
    let mut cooperation_optimal = true;
    let mut defection_dominant = true;
    for mask in 0..(1usize << n) {
        let moves = profile(mask);
        let collective: f64 = payoffs(&moves).iter().sum();
        if moves.iter().any(|m| *m == Move::Defect) && collective >= all_c {
            cooperation_optimal = false;
        }
        for i in 0..n {
            let mut c = moves.clone();
            c[i] = Move::Cooperate;
            let mut d = moves.clone();
            d[i] = Move::Defect;
            if payoffs(&d)[i] <= payoffs(&c)[i] {
                defection_dominant = false;
            }
        }
    }
    DilemmaReport {
        n_agents: n,
        profiles_checked: 1 << n,
        cooperation_optimal,
        defection_dominant,
    }
}

#[derive(Clone, Debug)]
pub struct PredationWorld {
    pub config: PredationConfig,
    pub prey: f64,
    pub agents: Vec<f64>,
    pub step_index: usize,
}

impl PredationWorld {
    pub fn new(config: PredationConfig) -> Self {
        let n = config.n_agents;
        Self {
            prey: config.length / 2.0,
            agents: vec![0.0; n],
            step_index: 0,
            config,
        }
    }

    /// Places the prey and agents explicitly.
    pub fn with_positions(config: PredationConfig, prey: f64, agents: Vec<f64>) -> Self {
        Self {
            prey,
            agents,
            step_index: 0,
            config,
        }
    }

    pub fn state(&self) -> EnvState {
        EnvState {
            observation: self.agents.iter().map(|x| x - self.prey).collect(),
            step_index: self.step_index,
        }
    }
}

impl Environment for PredationWorld {
    fn name(&self) -> &'static str {
        "predation"
    }

    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn action_counts(&self) -> Vec<usize> {
        vec![ACTION_COUNT; self.config.n_agents]
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn observation_dim(&self) -> usize {
        self.config.n_agents
    }

    fn input_scale(&self) -> f64 {
        1.0 / self.config.length
    }

    fn reset(&mut self, rng: &mut SimRng) -> EnvState {
        let len = self.config.length;
        self.prey = rng.random_range(0.0..=len);
        self.agents = (0..self.config.n_agents).map(|_| rng.random_range(0.0..=len)).collect();
        self.step_index = 0;
        self.state()
    }

    fn step(&mut self, action: &JointAction, _rng: &mut SimRng) -> Result<StepOutcome> {
        self.validate_action(action)?;
        let moves: Vec<Move> = self
            .agents
            .iter()
            .zip(&action.0)
            .map(|(x, a)| classify(x - self.prey, *a))
            .collect();
        let len = self.config.length;
        for (x, a) in self.agents.iter_mut().zip(&action.0) {
            *x = (*x + direction(*a) * self.config.step_size).clamp(0.0, len);
        }
        self.step_index += 1;
        let events = moves
            .iter()
            .map(|m| AgentEvent {
                cooperated: Some(*m == Move::Cooperate),
                ..AgentEvent::default()
            })
            .collect();
        Ok(StepOutcome {
            next_state: self.state(),
            rewards: payoffs(&moves),
            terminal: self.step_index >= self.config.horizon,
            events,
        })
    }

    fn layout(&self, state: &EnvState) -> AgentLayout {
        // Offsets share the prey as origin, so pairwise gaps are preserved.
        AgentLayout::Line {
            positions: state.observation.clone(),
            extent: self.config.length,
        }
    }

    fn render_ascii(&self) -> String {
        let width = self.config.length.round() as usize + 1;
        let mut line = vec!['.'; width];
        let cell = |x: f64| (x.round() as usize).min(width - 1);
        line[cell(self.prey)] = 'P';
        for (i, x) in self.agents.iter().enumerate() {
            line[cell(*x)] = std::char::from_digit((i % 10) as u32, 10).unwrap_or('#');
        }
        line.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdp::sim_rng;
    use Move::*;

    fn two_agent(prey: f64, agents: [f64; 2]) -> PredationWorld {
        PredationWorld::with_positions(
            PredationConfig {
                n_agents: 2,
                ..PredationConfig::default()
            },
            prey,
            agents.to_vec(),
        )
    }

    #[test]
    fn two_agent_payoff_table() {
        assert_eq!(payoffs(&[Cooperate, Cooperate]), vec![-1.0, -1.0]);
        assert_eq!(payoffs(&[Defect, Defect]), vec![-3.0, -3.0]);
        assert_eq!(payoffs(&[Cooperate, Defect]), vec![-4.0, 0.0]);
        assert_eq!(payoffs(&[Defect; 8]), vec![-15.0; 8]);
    }

    #[test]
    fn dilemma_structure_for_small_teams() {
        for n in 2..=4 {
            let report = check_dilemma(n);
            assert!(report.holds(), "{report:?}");
            assert_eq!(report.profiles_checked, 1 << n);
        }
    }

    #[test]
    fn mixed_profile_collective_matches_closed_form() {
        // k cooperators each pay 2N, defectors pay nothing
        for n in 2..=4usize {
            for k in 1..n {
                let mut moves = vec![Defect; n];
                moves[..k].fill(Cooperate);
                let total: f64 = payoffs(&moves).iter().sum();
                assert_eq!(total, -2.0 * (n * k) as f64);
            }
        }
    }

    #[test]
    fn step_moves_and_rewards() {
        let mut world = two_agent(15.0, [10.0, 20.0]);
        let mut rng = sim_rng(0);
        // agent 0 right (toward), agent 1 right (away)
        let out = world.step(&JointAction(vec![1, 1]), &mut rng).unwrap();
        assert_eq!(out.rewards, vec![-4.0, 0.0]);
        assert_eq!(world.agents, vec![11.0, 21.0]);
        assert_eq!(out.next_state.observation, vec![-4.0, 6.0]);
        assert_eq!(out.events[0].cooperated, Some(true));
        assert_eq!(out.events[1].cooperated, Some(false));
    }

    #[test]
    fn positions_clamp_to_segment() {
        let mut world = two_agent(15.0, [0.0, 30.0]);
        let mut rng = sim_rng(0);
        let out = world.step(&JointAction(vec![0, 1]), &mut rng).unwrap();
        assert_eq!(world.agents, vec![0.0, 30.0]);
        assert_eq!(out.rewards, vec![-3.0, -3.0]);
    }

    #[test]
    fn sitting_on_prey_is_defect() {
        assert_eq!(classify(0.0, 0), Defect);
        assert_eq!(classify(0.0, 1), Defect);
        assert_eq!(classify(-0.3, 1), Cooperate);
        assert_eq!(classify(0.3, 1), Defect);
    }

    #[test]
    fn invalid_action_fails() {
        let mut world = two_agent(15.0, [1.0, 2.0]);
        assert!(world.step(&JointAction(vec![2, 0]), &mut sim_rng(0)).is_err());
    }

    #[test]
    fn reset_is_seed_reproducible() {
        let mut a = PredationWorld::new(PredationConfig::default());
        let mut b = PredationWorld::new(PredationConfig::default());
        assert_eq!(a.reset(&mut sim_rng(42)), b.reset(&mut sim_rng(42)));
        assert!(a.agents.iter().all(|x| (0.0..=30.0).contains(x)));
    }

    #[test]
    fn ascii_marks_prey() {
        let world = two_agent(15.0, [3.0, 27.0]);
        let art = world.render_ascii();
        assert_eq!(art.chars().nth(15), Some('P'));
        assert_eq!(art.chars().nth(3), Some('0'));
    }
}
