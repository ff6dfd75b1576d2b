//! Environment interface, trajectory collection and return bookkeeping.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The RNG used everywhere a simulation needs randomness.
pub type SimRng = ChaCha8Rng;

pub fn sim_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Global state as seen by every agent.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub step_index: usize,
}

/// One discrete action index per agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointAction(pub Vec<usize>);

/// Per-agent facts about a step that some learners (intrinsic rewards,
/// metrics) need beyond the scalar reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AgentEvent {
    pub ate_apple: bool,
    pub cleaned_waste: bool,
    /// An apple was one move away and the agent did not take it.
    pub passed_up_apple: bool,
    /// Predation only: whether the move approached the prey.
    pub cooperated: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub rewards: Vec<f64>,
    pub terminal: bool,
    pub events: Vec<AgentEvent>,
}

/// Where agents are, for neighbourhood construction.
#[derive(Clone, Debug, PartialEq)]
pub enum AgentLayout {
    /// Points on a segment of the given length.
    Line { positions: Vec<f64>, extent: f64 },
    /// Grid cells `(row, col)`.
    Grid {
        cells: Vec<(i64, i64)>,
        rows: usize,
        cols: usize,
    },
}

pub trait Environment {
    fn name(&self) -> &'static str;
    fn n_agents(&self) -> usize;
    fn action_counts(&self) -> Vec<usize>;
    fn horizon(&self) -> usize;
    fn observation_dim(&self) -> usize;
    /// Multiplier applied to observations before they reach a network.
    fn input_scale(&self) -> f64 {
        1.0
    }
    fn reset(&mut self, rng: &mut SimRng) -> EnvState;
    fn step(&mut self, action: &JointAction, rng: &mut SimRng) -> Result<StepOutcome>;
    fn layout(&self, state: &EnvState) -> AgentLayout;
    fn render_ascii(&self) -> String;

    fn validate_action(&self, action: &JointAction) -> Result<()> {
        let counts = self.action_counts();
        if action.0.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                context: "joint action",
                expected: counts.len(),
                actual: action.0.len(),
            });
        }
        for (agent, (&a, &count)) in action.0.iter().zip(&counts).enumerate() {
            if a >= count {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    action_count: count,
                });
            }
        }
        Ok(())
    }
}

/// Anything that yields per-agent action distributions for a state.
pub trait JointPolicy {
    fn distributions(&self, state: &EnvState) -> Result<Vec<Vec<f64>>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub actions: JointAction,
    pub rewards: Vec<f64>,
    pub next_state: EnvState,
    pub events: Vec<AgentEvent>,
}

/// One episode of experience plus the behaviour distributions it was
/// sampled from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub steps: Vec<Transition>,
    /// `behavior[t][i]` is agent i's action distribution at `steps[t].state`.
    pub behavior: Vec<Vec<Vec<f64>>>,
    pub n_agents: usize,
    pub seed: u64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn agent_rewards(&self, agent: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.rewards[agent]).collect()
    }

    pub fn agent_actions(&self, agent: usize) -> Vec<usize> {
        self.steps.iter().map(|s| s.actions.0[agent]).collect()
    }

    pub fn states(&self) -> impl Iterator<Item = &EnvState> {
        self.steps.iter().map(|s| &s.state)
    }

    /// Line-oriented dump: `step<TAB>state<TAB>actions<TAB>rewards`.
    pub fn to_text(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(",");
        let mut out = String::new();
        for (t, step) in self.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{t}\t{}\t{}\t{}",
                join(&mut step.state.observation.iter().map(|v| format!("{v:?}"))),
                join(&mut step.actions.0.iter().map(usize::to_string)),
                join(&mut step.rewards.iter().map(|v| format!("{v:?}"))),
            );
        }
        out
    }
}

/// A parsed line of [`TrajectoryBatch::to_text`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLine {
    pub step: usize,
    pub state: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

pub fn parse_trajectory_text(text: &str) -> Result<Vec<TrajectoryLine>> {
    fn list<T: std::str::FromStr>(field: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        if field.is_empty() {
            return Ok(Vec::new());
        }
        field
            .split(',')
            .map(|v| v.parse::<T>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
            .collect()
    }
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("expected 4 tab-separated fields in `{line}`")));
            }
            Ok(TrajectoryLine {
                step: fields[0].parse().map_err(|e| Error::Parse(format!("step: {e}")))?,
                state: list(fields[1])?,
                actions: list(fields[2])?,
                rewards: list(fields[3])?,
            })
        })
        .collect()
}

/// γ and the GAE λ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountSpec {
    pub gamma: f64,
    pub gae_lambda: f64,
}

impl DiscountSpec {
    pub fn new(gamma: f64, gae_lambda: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if !(0.0..=1.0).contains(&gae_lambda) {
            return Err(Error::InvalidInput(format!("gae_lambda must lie in [0,1], got {gae_lambda}")));
        }
        Ok(Self { gamma, gae_lambda })
    }
}

impl Default for DiscountSpec {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.98,
        }
    }
}

/// Draws an index from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("not a probability vector: {probs:?}")));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(k);
        }
    }
    // u landed in the rounding gap at the top; take the last non-zero entry.
    Ok(probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1))
}

/// Runs one episode of `horizon` steps. Every source of randomness (initial
/// state, action sampling, environment dynamics) is drawn from `seed`.
pub fn rollout<E: Environment + ?Sized>(
    env: &mut E,
    policy: &dyn JointPolicy,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let mut rng = sim_rng(seed);
    let mut state = env.reset(&mut rng);
    let counts = env.action_counts();
    let mut steps = Vec::with_capacity(horizon);
    let mut behavior = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let dists = policy.distributions(&state)?;
        if dists.len() != counts.len() {
            return Err(Error::DimensionMismatch {
                context: "policy distributions",
                expected: counts.len(),
                actual: dists.len(),
            });
        }
        let mut actions = Vec::with_capacity(dists.len());
        for (agent, d) in dists.iter().enumerate() {
            if d.len() != counts[agent] {
                return Err(Error::DimensionMismatch {
                    context: "agent action distribution",
                    expected: counts[agent],
                    actual: d.len(),
                });
            }
            actions.push(sample_categorical(d, &mut rng)?);
        }
        let joint = JointAction(actions);
        let outcome = env
            .step(&joint, &mut rng)
            .map_err(|e| Error::InvalidInput(format!("{} step {t}: {e}", env.name())))?;
        steps.push(Transition {
            state: state.clone(),
            actions: joint,
            rewards: outcome.rewards,
            next_state: outcome.next_state.clone(),
            events: outcome.events,
        });
        behavior.push(dists);
        state = outcome.next_state;
        if outcome.terminal && t + 1 < horizon {
            return Err(Error::InvalidInput(format!(
                "{} terminated at step {} before horizon {horizon}",
                env.name(),
                t + 1
            )));
        }
    }
    Ok(TrajectoryBatch {
        steps,
        behavior,
        n_agents: counts.len(),
        seed,
    })
}

/// `Σ_t γ^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Undiscounted reward summed over agents and steps, divided by `N·T`.
pub fn normalized_collective_return(batch: &TrajectoryBatch) -> f64 {
    if batch.is_empty() || batch.n_agents == 0 {
        return 0.0;
    }
    let total: f64 = batch.steps.iter().flat_map(|s| s.rewards.iter()).sum();
    total / (batch.n_agents * batch.len()) as f64
}

/// Per-agent undiscounted episode return.
pub fn agent_returns(batch: &TrajectoryBatch) -> Vec<f64> {
    (0..batch.n_agents)
        .map(|i| batch.steps.iter().map(|s| s.rewards[i]).sum())
        .collect()
}
