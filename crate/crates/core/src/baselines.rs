//! Comparison algorithms on the same actor-critic substrate as SS:
//! value-parameter consensus (VPS), value sharing (VS), policy-bank
//! consensus (PS), a central critic (CL), intrinsic moral rewards (IMR)
//! and fully independent learners (IPPO).

use rand::Rng;

use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::learner::{Algorithm, Learner, LearnerSpec, UpdateContext, UpdateStats};
use crate::mmdp::{AgentEvent, EnvState, JointPolicy, TrajectoryBatch};
use crate::nn::{DenseNet, Matrix};
use crate::ppo::{gae, logged_probs, state_inputs, with_terminal_bootstrap, Actor, Critic, PpoHyper};
use crate::topology::Adjacency;

/// Row-stochastic mixing matrix supported on the adjacency plus self-loops.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusWeights {
    pub rows: Vec<Vec<f64>>,
}

impl ConsensusWeights {
    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
        }
    }

    /// Uniform over `{i} ∪ 𝒩_i`.
    pub fn uniform(adj: &Adjacency) -> Self {
        let n = adj.n_agents();
        let rows = (0..n)
            .map(|i| {
                let w = 1.0 / (adj.neighbours[i].len() + 1) as f64;
                (0..n)
                    .map(|j| if j == i || adj.contains(i, j) { w } else { 0.0 })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn is_row_stochastic(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.iter().all(|w| *w >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-12)
    }

    /// Replaces every net by the weighted average of the nets it listens to.
    pub fn apply(&self, nets: &mut [&mut DenseNet]) -> Result<()> {
        let n = nets.len();
        if self.rows.len() != n {
            return Err(Error::DimensionMismatch {
                context: "consensus weights",
                expected: n,
                actual: self.rows.len(),
            });
        }
        if nets.iter().any(|net| !net.same_architecture(nets[0])) {
            return Err(Error::InvalidInput("consensus over nets with different architectures".into()));
        }
        let snapshot: Vec<Vec<f64>> = nets.iter().map(|net| net.params().copied().collect()).collect();
        for (i, net) in nets.iter_mut().enumerate() {
            for (k, p) in net.params_mut().enumerate() {
                *p = self.rows[i].iter().zip(&snapshot).map(|(w, s)| w * s[k]).sum();
            }
        }
        Ok(())
    }
}

/// Intrinsic moral bonus for one agent's step.
pub fn imr_bonus(env: EnvKind, event: &AgentEvent, beta: f64) -> Result<f64> {
    let kind = match env {
        EnvKind::Cleanup => event.cleaned_waste,
        EnvKind::Harvest => event.passed_up_apple,
        EnvKind::Predation => event.cooperated == Some(true),
        EnvKind::Navigation => {
            return Err(Error::UnsupportedEnvironment {
                algorithm: "imr".into(),
                env: env.to_string(),
            })
        }
    };
    Ok(if kind { beta } else { 0.0 })
}

/// Training rewards for IMR: external plus bonus.
pub fn imr_rewards(batch: &TrajectoryBatch, agent: usize, env: EnvKind, beta: f64) -> Result<Vec<f64>> {
    batch
        .steps
        .iter()
        .map(|s| Ok(s.rewards[agent] + imr_bonus(env, &s.events[agent], beta)?))
        .collect()
}

fn scaled(state: &EnvState, scale: f64) -> Vec<f64> {
    state.observation.iter().map(|x| x * scale).collect()
}

/// Independent actors with per-agent critics, covering ippo, imr, cl, vs and vps.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub kind: Algorithm,
    pub env: EnvKind,
    pub actors: Vec<Actor>,
    pub critics: Vec<Critic>,
    /// CL only: the critic of the summed reward.
    pub central: Option<Critic>,
    pub hyper: PpoHyper,
    pub input_scale: f64,
    pub imr_beta: f64,
}

impl PpoLearner {
    pub fn new<R: Rng + ?Sized>(spec: &LearnerSpec, rng: &mut R) -> Result<Self> {
        let n = spec.action_counts.len();
        let mut actors = Vec::with_capacity(n);
        let mut critics = Vec::with_capacity(n);
        for &a in &spec.action_counts {
            actors.push(Actor::new(spec.obs_dim, &spec.actor_hidden, a, rng)?);
            critics.push(Critic::new(spec.obs_dim, &spec.critic_hidden, rng)?);
        }
        let central = (spec.algorithm == Algorithm::Cl)
            .then(|| Critic::new(spec.obs_dim, &spec.critic_hidden, rng))
            .transpose()?;
        if spec.algorithm == Algorithm::Vps {
            // Consensus averages parameters, so every critic starts identical.
            let first = critics[0].clone();
            critics.iter_mut().for_each(|c| *c = first.clone());
        }
        Ok(Self {
            kind: spec.algorithm,
            env: spec.env,
            actors,
            critics,
            central,
            hyper: spec.hyper.ppo.clone(),
            input_scale: spec.input_scale,
            imr_beta: spec.imr_beta,
        })
    }

    fn rewards(&self, batch: &TrajectoryBatch, agent: usize) -> Result<Vec<f64>> {
        if self.kind == Algorithm::Imr {
            imr_rewards(batch, agent, self.env, self.imr_beta)
        } else {
            Ok(batch.agent_rewards(agent))
        }
    }

    /// Per-agent advantages for one inner iteration. VPS critics are
    /// updated and mixed here, before the advantages are taken.
    fn advantages(
        &mut self,
        batch: &TrajectoryBatch,
        inputs: &Matrix,
        ctx: &UpdateContext<'_>,
        communicate: bool,
        stats: &mut UpdateStats,
    ) -> Result<Vec<Vec<f64>>> {
        let n = self.actors.len();
        let rewards: Vec<Vec<f64>> = (0..n).map(|i| self.rewards(batch, i)).collect::<Result<_>>()?;
        match self.kind {
            Algorithm::Cl => {
                let total: Vec<f64> = (0..batch.len()).map(|t| rewards.iter().map(|r| r[t]).sum()).collect();
                let central = self.central.as_mut().expect("cl has a central critic");
                let adv = central.advantages(inputs, &total, &self.hyper)?;
                stats.value_loss += central.regress(inputs, &total, &self.hyper)?;
                Ok(vec![adv; n])
            }
            Algorithm::Vs => {
                let values: Vec<Vec<f64>> = self.critics.iter().map(|c| c.values(inputs)).collect::<Result<_>>()?;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let averaged: Vec<f64> = (0..batch.len())
                        .map(|t| {
                            let ns: &[usize] = if communicate { &ctx.topology.steps[t].neighbours[i] } else { &[] };
                            (values[i][t] + ns.iter().map(|j| values[*j][t]).sum::<f64>()) / (ns.len() + 1) as f64
                        })
                        .collect();
                    out.push(gae(&rewards[i], &with_terminal_bootstrap(averaged), self.hyper.gamma, self.hyper.gae_lambda)?);
                }
                for (c, r) in self.critics.iter_mut().zip(&rewards) {
                    stats.value_loss += c.regress(inputs, r, &self.hyper)? / n as f64;
                }
                Ok(out)
            }
            Algorithm::Vps => {
                for (c, r) in self.critics.iter_mut().zip(&rewards) {
                    stats.value_loss += c.regress(inputs, r, &self.hyper)? / n as f64;
                }
                if communicate {
                    let weights = ConsensusWeights::uniform(&ctx.topology.union(n));
                    let mut nets: Vec<&mut DenseNet> = self.critics.iter_mut().map(|c| &mut c.net).collect();
                    weights.apply(&mut nets)?;
                    stats.shares += 1;
                }
                self.critics
                    .iter()
                    .zip(&rewards)
                    .map(|(c, r)| c.advantages(inputs, r, &self.hyper))
                    .collect()
            }
            _ => {
                let adv = self
                    .critics
                    .iter()
                    .zip(&rewards)
                    .map(|(c, r)| c.advantages(inputs, r, &self.hyper))
                    .collect::<Result<Vec<_>>>()?;
                for (c, r) in self.critics.iter_mut().zip(&rewards) {
                    stats.value_loss += c.regress(inputs, r, &self.hyper)? / n as f64;
                }
                Ok(adv)
            }
        }
    }
}

impl JointPolicy for PpoLearner {
    fn distributions(&self, state: &EnvState) -> Result<Vec<Vec<f64>>> {
        let input = scaled(state, self.input_scale);
        self.actors.iter().map(|a| a.distribution(&input)).collect()
    }
}

impl Learner for PpoLearner {
    fn algorithm(&self) -> Algorithm {
        self.kind
    }

    fn update(&mut self, batch: &TrajectoryBatch, ctx: &UpdateContext<'_>) -> Result<UpdateStats> {
        let inputs = state_inputs(batch, self.input_scale)?;
        let mut stats = UpdateStats::default();
        let communicate = ctx.communicates();
        let n = self.actors.len();
        for _ in 0..self.hyper.epochs {
            // Advantages are taken before this iteration's critic step,
            // except for VPS whose policy step follows the mixed critic.
            let adv = self.advantages(batch, &inputs, ctx, communicate, &mut stats)?;
            for (i, actor) in self.actors.iter_mut().enumerate() {
                let obj = actor.surrogate_step(&inputs, &batch.agent_actions(i), &logged_probs(batch, i), &adv[i], &self.hyper)?;
                stats.policy_objective += obj / n as f64;
            }
        }
        stats.policy_objective /= self.hyper.epochs as f64;
        stats.value_loss /= self.hyper.epochs as f64;
        Ok(stats)
    }
}

/// PS: every agent keeps a bank of N policies, its estimate of the joint
/// policy, trains all of them on its own advantage and mixes each slot
/// with its neighbours'. Agent i acts with slot i of its own bank.
#[derive(Clone, Debug)]
pub struct PsLearner {
    pub banks: Vec<Vec<Actor>>,
    pub critics: Vec<Critic>,
    pub hyper: PpoHyper,
    pub input_scale: f64,
}

impl PsLearner {
    pub fn new<R: Rng + ?Sized>(spec: &LearnerSpec, rng: &mut R) -> Result<Self> {
        let n = spec.action_counts.len();
        let slots: Vec<Actor> = spec
            .action_counts
            .iter()
            .map(|a| Actor::new(spec.obs_dim, &spec.actor_hidden, *a, rng))
            .collect::<Result<_>>()?;
        let critics = (0..n)
            .map(|_| Critic::new(spec.obs_dim, &spec.critic_hidden, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            banks: vec![slots; n],
            critics,
            hyper: spec.hyper.ppo.clone(),
            input_scale: spec.input_scale,
        })
    }

    /// Mixes slot `k` across all banks with `weights`.
    pub fn consensus(&mut self, weights: &ConsensusWeights) -> Result<()> {
        let n_slots = self.banks.first().map_or(0, Vec::len);
        for k in 0..n_slots {
            let mut nets: Vec<&mut DenseNet> = self.banks.iter_mut().map(|b| &mut b[k].net).collect();
            weights.apply(&mut nets)?;
        }
        Ok(())
    }
}

impl JointPolicy for PsLearner {
    fn distributions(&self, state: &EnvState) -> Result<Vec<Vec<f64>>> {
        let input = scaled(state, self.input_scale);
        self.banks.iter().enumerate().map(|(i, b)| b[i].distribution(&input)).collect()
    }
}

impl Learner for PsLearner {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ps
    }

    fn update(&mut self, batch: &TrajectoryBatch, ctx: &UpdateContext<'_>) -> Result<UpdateStats> {
        let inputs = state_inputs(batch, self.input_scale)?;
        let n = self.banks.len();
        let actions: Vec<Vec<usize>> = (0..n).map(|k| batch.agent_actions(k)).collect();
        let logged: Vec<Vec<f64>> = (0..n).map(|k| logged_probs(batch, k)).collect();
        let mut stats = UpdateStats::default();
        let communicate = ctx.communicates();
        for _ in 0..self.hyper.epochs {
            for i in 0..n {
                let rewards = batch.agent_rewards(i);
                let adv = self.critics[i].advantages(&inputs, &rewards, &self.hyper)?;
                for (slot, actor) in self.banks[i].iter_mut().enumerate() {
                    let obj = actor.surrogate_step(&inputs, &actions[slot], &logged[slot], &adv, &self.hyper)?;
                    if slot == i {
                        stats.policy_objective += obj / n as f64;
                    }
                }
                stats.value_loss += self.critics[i].regress(&inputs, &rewards, &self.hyper)? / n as f64;
            }
            if communicate {
                self.consensus(&ConsensusWeights::uniform(&ctx.topology.union(n)))?;
                stats.shares += 1;
            }
        }
        stats.policy_objective /= self.hyper.epochs as f64;
        stats.value_loss /= self.hyper.epochs as f64;
        Ok(stats)
    }
}
