//! The suggestion-sharing learner.
//!
//! Agent i owns its policy π^{ii}, one suggestion net π^{ij} per peer and a
//! value net V_i. Each inner iteration agents exchange their current action
//! distributions π^{jj} and the suggestions π^{ji} aimed at each neighbour,
//! then ascend the dual clipped objective
//!
//! ```text
//! min(ξ_i ξ_N Â_i, clip(ξ_i) ξ_N Â_i)
//!   − κ̂_i Σ_j [ ρ 𝕀_{X^{ij}} ‖π^{ij} − π^{jj}‖² + ρ 𝕀_{X^{ii}} ‖π^{ii} − π^{ji}‖² ]
//! ```
//!
//! where ξ_i = π^{ii}(a_i)/π^{ii}_old(a_i) and ξ_N = Π_j π^{ij}(a_j)/π^{jj}_old(a_j).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learner::{Algorithm, Learner, UpdateContext, UpdateStats};
use crate::mmdp::{EnvState, JointPolicy, TrajectoryBatch};
use crate::nn::{softmax_backward, ForwardCache, Matrix, NetGrads};
use crate::ppo::{ascend, clamp_denominator, kappa_hat, logged_probs, state_inputs, surrogate_terms, Actor, Critic, PpoHyper};
use crate::topology::EpisodeTopology;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsHyper {
    #[serde(flatten)]
    pub ppo: PpoHyper,
    /// Weight of both discrepancy penalties.
    pub rho: f64,
}

impl Default for SsHyper {
    fn default() -> Self {
        Self {
            ppo: PpoHyper::default(),
            rho: 0.1,
        }
    }
}

impl SsHyper {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::Config {
                field: "hyper.rho".into(),
                message: format!("must be a finite non-negative number, got {}", self.rho),
            });
        }
        Ok(())
    }
}

/// One agent's nets.
#[derive(Clone, Debug)]
pub struct SuggestingAgent {
    pub own: Actor,
    /// `suggestions[j]` is π^{ij}; `None` at `j == i`.
    pub suggestions: Vec<Option<Actor>>,
    pub critic: Critic,
}

/// Every agent's own policy and suggestions.
#[derive(Clone, Debug)]
pub struct SuggestingPolicySet {
    pub agents: Vec<SuggestingAgent>,
    pub input_scale: f64,
}

impl SuggestingPolicySet {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_counts: &[usize],
        actor_hidden: &[usize],
        critic_hidden: &[usize],
        input_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = action_counts.len();
        let agents = (0..n)
            .map(|i| {
                let own = Actor::new(obs_dim, actor_hidden, action_counts[i], rng)?;
                let suggestions = (0..n)
                    .map(|j| {
                        (j != i)
                            .then(|| Actor::new(obs_dim, actor_hidden, action_counts[j], rng))
                            .transpose()
                    })
                    .collect::<Result<_>>()?;
                let critic = Critic::new(obs_dim, critic_hidden, rng)?;
                Ok(SuggestingAgent { own, suggestions, critic })
            })
            .collect::<Result<_>>()?;
        Ok(Self { agents, input_scale })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// π^{ij}, or π^{ii} when `i == j`.
    pub fn net(&self, i: usize, j: usize) -> &Actor {
        if i == j {
            &self.agents[i].own
        } else {
            self.agents[i].suggestions[j].as_ref().expect("suggestion nets exist for every peer")
        }
    }

    pub fn scaled(&self, state: &EnvState) -> Vec<f64> {
        state.observation.iter().map(|x| x * self.input_scale).collect()
    }

    /// π^{ij}(·|s) for a single state.
    pub fn distribution(&self, i: usize, j: usize, state: &EnvState) -> Result<Vec<f64>> {
        self.net(i, j).distribution(&self.scaled(state))
    }
}

impl JointPolicy for SuggestingPolicySet {
    fn distributions(&self, state: &EnvState) -> Result<Vec<Vec<f64>>> {
        let input = self.scaled(state);
        self.agents.iter().map(|a| a.own.distribution(&input)).collect()
    }
}

/// What agent `from` sends to agent `to` about one state.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedEntry {
    /// π^{from,from}(·|s), the sender's own distribution.
    pub behavior: Vec<f64>,
    /// π^{from,to}(·|s), the sender's suggestion for the receiver.
    pub suggestion: Vec<f64>,
}

/// Shared distributions for every step of an episode, keyed `(from, to)`.
/// An entry exists exactly when `from ∈ 𝒩_to` at that step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SharedTables {
    pub steps: Vec<BTreeMap<(usize, usize), SharedEntry>>,
}

impl SharedTables {
    /// Tables with no entries, as used when communication is skipped.
    pub fn silent(horizon: usize) -> Self {
        Self {
            steps: vec![BTreeMap::new(); horizon],
        }
    }

    /// Evaluates every sender's current nets on the batch states and
    /// records what each edge of the topology carries.
    pub fn share(set: &SuggestingPolicySet, inputs: &Matrix, topology: &EpisodeTopology) -> Result<Self> {
        let horizon = inputs.rows;
        if topology.steps.len() != horizon {
            return Err(Error::DimensionMismatch {
                context: "topology steps",
                expected: horizon,
                actual: topology.steps.len(),
            });
        }
        let n = set.n_agents();
        let union = topology.union(n);
        let mut cache: BTreeMap<(usize, usize), Vec<Vec<f64>>> = BTreeMap::new();
        for to in 0..n {
            for &from in &union.neighbours[to] {
                for key in [(from, from), (from, to)] {
                    if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(key) {
                        e.insert(set.net(key.0, key.1).distributions(inputs)?.1);
                    }
                }
            }
        }
        let steps = topology
            .steps
            .iter()
            .enumerate()
            .map(|(t, adj)| {
                let mut map = BTreeMap::new();
                for (to, ns) in adj.neighbours.iter().enumerate() {
                    for &from in ns {
                        map.insert(
                            (from, to),
                            SharedEntry {
                                behavior: cache[&(from, from)][t].clone(),
                                suggestion: cache[&(from, to)][t].clone(),
                            },
                        );
                    }
                }
                map
            })
            .collect();
        Ok(Self { steps })
    }

    pub fn get(&self, step: usize, from: usize, to: usize) -> Option<&SharedEntry> {
        self.steps.get(step)?.get(&(from, to))
    }

    pub fn entry_count(&self) -> usize {
        self.steps.iter().map(BTreeMap::len).sum()
    }
}

/// ξ_i, ξ_N and how many denominators hit the floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratios {
    pub own: f64,
    pub neighbourhood: f64,
    pub flagged: usize,
}

/// `own = (π^{ii}(a_i), π^{ii}_old(a_i))`; each factor is
/// `(π^{ij}(a_j), π^{jj}_old(a_j))`.
pub fn ratios(own: (f64, f64), factors: &[(f64, f64)]) -> Ratios {
    let (den, f0) = clamp_denominator(own.1);
    let mut flagged = usize::from(f0);
    let mut neighbourhood = 1.0;
    for (num, den) in factors {
        let (d, f) = clamp_denominator(*den);
        flagged += usize::from(f);
        neighbourhood *= num / d;
    }
    Ratios {
        own: own.0 / den,
        neighbourhood,
        flagged,
    }
}

/// Whether the advantage-driven update would widen a discrepancy:
/// `(ratio − 1)·Â ≥ 0`.
pub fn in_penalty_set(ratio: f64, advantage: f64) -> bool {
    (ratio - 1.0) * advantage >= 0.0
}

/// Membership flags for neighbour j: `(X^{ij}, X^{ii})`.
pub fn indicator_memberships(
    own_prob: f64,
    suggestion_prob: f64,
    peer_behavior_prob: f64,
    peer_suggestion_prob: f64,
    advantage: f64,
) -> (bool, bool) {
    let x_ij = suggestion_prob / clamp_denominator(peer_behavior_prob).0;
    let x_ii = own_prob / clamp_denominator(peer_suggestion_prob).0;
    (in_penalty_set(x_ij, advantage), in_penalty_set(x_ii, advantage))
}

/// One neighbour's contribution at a sample.
pub struct NeighbourSample<'a> {
    /// π^{ij}(·|s) under the current suggestion net.
    pub suggestion: &'a [f64],
    /// a_j.
    pub action: usize,
    pub shared: &'a SharedEntry,
}

/// Objective of one sample with its gradient with respect to the output
/// probabilities of π^{ii} and of each π^{ij}.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEval {
    pub value: f64,
    pub surrogate: f64,
    pub penalty: f64,
    pub d_own: Vec<f64>,
    pub d_suggestions: Vec<Vec<f64>>,
    pub memberships: Vec<(bool, bool)>,
    pub flagged: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn sample_objective(
    own: &[f64],
    action: usize,
    logged: f64,
    advantage: f64,
    kappa: f64,
    neighbours: &[NeighbourSample<'_>],
    hyper: &SsHyper,
) -> SampleEval {
    let factors: Vec<(f64, f64)> = neighbours
        .iter()
        .map(|nb| (nb.suggestion[nb.action], nb.shared.behavior[nb.action]))
        .collect();
    let r = ratios((own[action], logged), &factors);
    let (surrogate, d_xi_i, d_xi_n) = surrogate_terms(r.own, r.neighbourhood, advantage, hyper.ppo.clip_eps);

    let mut d_own = vec![0.0; own.len()];
    d_own[action] += d_xi_i / clamp_denominator(logged).0;
    let mut d_suggestions: Vec<Vec<f64>> = neighbours.iter().map(|nb| vec![0.0; nb.suggestion.len()]).collect();
    for (k, nb) in neighbours.iter().enumerate() {
        // ∂ξ_N/∂π^{ij}(a_j) is the product of the other factors over this denominator
        let others: f64 = factors
            .iter()
            .enumerate()
            .filter(|(m, _)| *m != k)
            .map(|(_, (num, den))| num / clamp_denominator(*den).0)
            .product();
        d_suggestions[k][nb.action] += d_xi_n * others / clamp_denominator(nb.shared.behavior[nb.action]).0;
    }

    let weight = kappa * hyper.rho;
    let mut penalty = 0.0;
    let mut memberships = Vec::with_capacity(neighbours.len());
    for (k, nb) in neighbours.iter().enumerate() {
        let flags = indicator_memberships(
            own[action],
            nb.suggestion[nb.action],
            nb.shared.behavior[nb.action],
            nb.shared.suggestion[action],
            advantage,
        );
        memberships.push(flags);
        if weight == 0.0 {
            continue;
        }
        if flags.0 {
            penalty += weight * sq_dist(nb.suggestion, &nb.shared.behavior);
            for (g, (q, c)) in d_suggestions[k].iter_mut().zip(nb.suggestion.iter().zip(&nb.shared.behavior)) {
                *g -= 2.0 * weight * (q - c);
            }
        }
        if flags.1 {
            penalty += weight * sq_dist(own, &nb.shared.suggestion);
            for (g, (p, u)) in d_own.iter_mut().zip(own.iter().zip(&nb.shared.suggestion)) {
                *g -= 2.0 * weight * (p - u);
            }
        }
    }

    SampleEval {
        value: surrogate - penalty,
        surrogate,
        penalty,
        d_own,
        d_suggestions,
        memberships,
        flagged: r.flagged,
    }
}

/// Agent i's batch-mean objective with parameter gradients for π^{ii} and
/// every π^{ij} (`None` for peers never in 𝒩_i during the batch).
#[derive(Clone, Debug)]
pub struct AgentObjective {
    pub objective: f64,
    pub surrogate: f64,
    pub penalty: f64,
    pub kappa: f64,
    pub own_grads: NetGrads,
    pub suggestion_grads: Vec<Option<NetGrads>>,
    pub flagged: usize,
}

/// The inputs to one agent's update that do not change across agents.
pub struct BatchView<'a> {
    pub batch: &'a TrajectoryBatch,
    pub inputs: &'a Matrix,
    pub topology: &'a EpisodeTopology,
    pub shared: &'a SharedTables,
    /// When false, neighbourhoods are treated as empty.
    pub communicate: bool,
}

pub fn ss_objective_and_grads(
    set: &SuggestingPolicySet,
    i: usize,
    view: &BatchView<'_>,
    advantages: &[f64],
    hyper: &SsHyper,
) -> Result<AgentObjective> {
    let batch = view.batch;
    let t_len = batch.len();
    if advantages.len() != t_len || view.inputs.rows != t_len {
        return Err(Error::DimensionMismatch {
            context: "ss batch",
            expected: t_len,
            actual: advantages.len(),
        });
    }
    let n = set.n_agents();
    let kappa = kappa_hat(advantages)?;
    let logged = logged_probs(batch, i);

    let neighbourhood = |t: usize| -> &[usize] {
        if view.communicate {
            &view.topology.steps[t].neighbours[i]
        } else {
            &[]
        }
    };
    let mut active = vec![false; n];
    for t in 0..t_len {
        for &j in neighbourhood(t) {
            active[j] = true;
        }
    }

    let (own_cache, own_probs) = set.net(i, i).distributions(view.inputs)?;
    let mut sugg: Vec<Option<(ForwardCache, Vec<Vec<f64>>)>> = Vec::with_capacity(n);
    for (j, on) in active.iter().enumerate() {
        sugg.push(if *on { Some(set.net(i, j).distributions(view.inputs)?) } else { None });
    }

    let mut own_logits = Matrix::zeros(t_len, own_probs[0].len());
    let mut sugg_logits: Vec<Option<Matrix>> = sugg
        .iter()
        .map(|s| s.as_ref().map(|(_, p)| Matrix::zeros(t_len, p[0].len())))
        .collect();
    let (mut objective, mut surrogate, mut penalty, mut flagged) = (0.0, 0.0, 0.0, 0);
    let scale = 1.0 / t_len as f64;

    for t in 0..t_len {
        let ns = neighbourhood(t);
        let mut samples = Vec::with_capacity(ns.len());
        for &j in ns {
            let shared = view.shared.get(t, j, i).ok_or(Error::MissingShare { from: j, to: i, step: t })?;
            let probs = &sugg[j].as_ref().expect("active neighbour").1[t];
            samples.push(NeighbourSample {
                suggestion: probs,
                action: batch.steps[t].actions.0[j],
                shared,
            });
        }
        let a_i = batch.steps[t].actions.0[i];
        let eval = sample_objective(&own_probs[t], a_i, logged[t], advantages[t], kappa, &samples, hyper);
        objective += eval.value;
        surrogate += eval.surrogate;
        penalty += eval.penalty;
        flagged += eval.flagged;

        let g: Vec<f64> = eval.d_own.iter().map(|x| x * scale).collect();
        own_logits.row_mut(t).copy_from_slice(&softmax_backward(&own_probs[t], &g));
        for (k, &j) in ns.iter().enumerate() {
            let g: Vec<f64> = eval.d_suggestions[k].iter().map(|x| x * scale).collect();
            let dz = softmax_backward(samples[k].suggestion, &g);
            let row = sugg_logits[j].as_mut().expect("active neighbour").row_mut(t);
            for (r, d) in row.iter_mut().zip(dz) {
                *r += d;
            }
        }
    }

    let objective = objective * scale;
    if !objective.is_finite() {
        return Err(Error::NonFinite {
            context: "suggestion-sharing objective",
            detail: format!("agent {i}: objective {objective}, kappa {kappa}"),
        });
    }
    let own_grads = set.net(i, i).net.backward_batch(&own_cache, &own_logits)?;
    let suggestion_grads = sugg
        .iter()
        .zip(&sugg_logits)
        .enumerate()
        .map(|(j, (s, g))| match (s, g) {
            (Some((cache, _)), Some(g)) => set.net(i, j).net.backward_batch(cache, g).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok(AgentObjective {
        objective,
        surrogate: surrogate * scale,
        penalty: penalty * scale,
        kappa,
        own_grads,
        suggestion_grads,
        flagged,
    })
}

/// Learner wrapper running the inner-iteration loop.
#[derive(Clone, Debug)]
pub struct SsLearner {
    pub set: SuggestingPolicySet,
    pub hyper: SsHyper,
    /// Number of table populations so far, for audit.
    pub shares: u64,
}

impl SsLearner {
    pub fn new(set: SuggestingPolicySet, hyper: SsHyper) -> Self {
        Self { set, hyper, shares: 0 }
    }
}

impl JointPolicy for SsLearner {
    fn distributions(&self, state: &EnvState) -> Result<Vec<Vec<f64>>> {
        self.set.distributions(state)
    }
}

impl Learner for SsLearner {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ss
    }

    fn update(&mut self, batch: &TrajectoryBatch, ctx: &UpdateContext<'_>) -> Result<UpdateStats> {
        let inputs = state_inputs(batch, self.set.input_scale)?;
        let n = self.set.n_agents();
        let mut stats = UpdateStats::default();
        let mut tables: Option<SharedTables> = None;
        let communicate = ctx.communicates();
        for _ in 0..self.hyper.ppo.epochs {
            if communicate && tables.is_none() {
                tables = Some(SharedTables::share(&self.set, &inputs, ctx.topology)?);
                stats.shares += 1;
            }
            let silent;
            let shared = match (&tables, communicate) {
                (Some(t), true) => t,
                _ => {
                    silent = SharedTables::silent(batch.len());
                    &silent
                }
            };
            let view = BatchView {
                batch,
                inputs: &inputs,
                topology: ctx.topology,
                shared,
                communicate,
            };

            // Share phase is a barrier: every agent reads the same tables
            // and the pre-update nets, then all updates are applied.
            let mut results = Vec::with_capacity(n);
            for i in 0..n {
                let rewards = batch.agent_rewards(i);
                let adv = self.set.agents[i].critic.advantages(&inputs, &rewards, &self.hyper.ppo)?;
                results.push(ss_objective_and_grads(&self.set, i, &view, &adv, &self.hyper)?);
            }
            let lr = self.hyper.ppo.actor_lr;
            for (i, res) in results.into_iter().enumerate() {
                let agent = &mut self.set.agents[i];
                ascend(&mut agent.own.net, &res.own_grads, &mut agent.own.adam, lr)?;
                for (j, g) in res.suggestion_grads.iter().enumerate() {
                    if let (Some(g), Some(actor)) = (g, agent.suggestions[j].as_mut()) {
                        ascend(&mut actor.net, g, &mut actor.adam, lr)?;
                    }
                }
                let rewards = batch.agent_rewards(i);
                stats.value_loss += agent.critic.regress(&inputs, &rewards, &self.hyper.ppo)? / n as f64;
                stats.policy_objective += res.objective / n as f64;
                stats.flagged += res.flagged;
            }
            tables = None;
            if communicate {
                tables = Some(SharedTables::share(&self.set, &inputs, ctx.topology)?);
                stats.shares += 1;
            }
        }
        stats.policy_objective /= self.hyper.ppo.epochs as f64;
        stats.value_loss /= self.hyper.ppo.epochs as f64;
        self.shares += stats.shares as u64;
        Ok(stats)
    }

    fn suggesting_set(&self) -> Option<&SuggestingPolicySet> {
        Some(&self.set)
    }
}
