//! The clipped-surrogate actor-critic substrate every learner is built on:
//! advantage estimation, value regression, ratio clipping and the
//! per-agent actor/critic pair with its optimiser state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdp::{DiscountSpec, TrajectoryBatch};
use crate::nn::{adam_step, softmax_backward, AdamState, DenseNet, ForwardCache, Matrix, NetGrads, PolicyHead};

/// Probability-ratio denominators are floored here; floored samples are flagged.
pub const RATIO_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoHyper {
    pub clip_eps: f64,
    /// Inner update iterations per episode.
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs: 3,
            gamma: 0.99,
            gae_lambda: 0.98,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: format!("hyper.{field}"),
                message: message.into(),
            })
        };
        DiscountSpec::new(self.gamma, self.gae_lambda)?;
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("actor_lr", "learning rates must be positive");
        }
        Ok(())
    }
}

pub fn clip(x: f64, eps: f64) -> f64 {
    x.max(1.0 - eps).min(1.0 + eps)
}

/// Floors a ratio denominator, reporting whether the floor was hit.
pub fn clamp_denominator(p: f64) -> (f64, bool) {
    if p < RATIO_FLOOR {
        (RATIO_FLOOR, true)
    } else {
        (p, false)
    }
}

/// Mean absolute advantage, the scale applied to discrepancy penalties.
pub fn kappa_hat(advantages: &[f64]) -> Result<f64> {
    if advantages.is_empty() {
        return Err(Error::InvalidInput("kappa_hat of an empty batch".into()));
    }
    Ok(advantages.iter().map(|a| a.abs()).sum::<f64>() / advantages.len() as f64)
}

/// Generalised advantage estimates by backward recursion. `values` carries
/// one extra trailing entry, the bootstrap for the state after the last step.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::DimensionMismatch {
            context: "gae values (T+1)",
            expected: rewards.len() + 1,
            actual: values.len(),
        });
    }
    let mut adv = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    Ok(adv)
}

/// `Σ_l γ^l r_{t+l}` for every t, truncated at the episode end.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut running = 0.0;
    for t in (0..rewards.len()).rev() {
        running = rewards[t] + gamma * running;
        out[t] = running;
    }
    out
}

/// Network inputs for every visited state, one row per step.
pub fn state_inputs(batch: &TrajectoryBatch, scale: f64) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = batch
        .states()
        .map(|s| s.observation.iter().map(|x| x * scale).collect())
        .collect();
    Matrix::from_rows(&rows)
}

pub fn value_predictions(critic: &DenseNet, inputs: &Matrix) -> Result<Vec<f64>> {
    Ok(critic.forward_batch(inputs)?.output().data.clone())
}

/// Values with the terminal bootstrap of zero appended.
pub fn with_terminal_bootstrap(mut values: Vec<f64>) -> Vec<f64> {
    values.push(0.0);
    values
}

/// Mean squared error between the critic's outputs and `targets`, with
/// its gradient.
pub fn value_loss_and_grad(critic: &DenseNet, inputs: &Matrix, targets: &[f64]) -> Result<(f64, NetGrads)> {
    if critic.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "critic output",
            expected: 1,
            actual: critic.output_dim(),
        });
    }
    if inputs.rows != targets.len() || targets.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "value targets",
            expected: inputs.rows,
            actual: targets.len(),
        });
    }
    let cache = critic.forward_batch(inputs)?;
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(targets.len(), 1);
    for (t, (v, y)) in cache.output().data.iter().zip(targets).enumerate() {
        let diff = v - y;
        loss += diff * diff;
        grad.data[t] = 2.0 * diff / n;
    }
    Ok((loss / n, critic.backward_batch(&cache, &grad)?))
}

/// Per-sample `min(ξ_i ξ_N Â, clip(ξ_i) ξ_N Â)` and its partial derivatives
/// with respect to ξ_i and ξ_N. Ties take the unclipped branch.
pub fn surrogate_terms(xi_i: f64, xi_n: f64, adv: f64, eps: f64) -> (f64, f64, f64) {
    let clipped_ratio = clip(xi_i, eps);
    let unclipped = xi_i * xi_n * adv;
    let clipped = clipped_ratio * xi_n * adv;
    if unclipped <= clipped {
        (unclipped, xi_n * adv, xi_i * adv)
    } else {
        // Only reachable with ξ_i outside the clip range, where clip is flat.
        (clipped, 0.0, clipped_ratio * adv)
    }
}

/// Batch-mean clipped surrogate of one policy and the gradient of that
/// mean with respect to the policy's logits.
#[derive(Clone, Debug)]
pub struct Surrogate {
    pub objective: f64,
    pub logit_grads: Matrix,
    pub flagged: usize,
}

pub fn clipped_surrogate(
    probs: &[Vec<f64>],
    actions: &[usize],
    logged: &[f64],
    advantages: &[f64],
    eps: f64,
) -> Result<Surrogate> {
    let t_len = probs.len();
    if actions.len() != t_len || logged.len() != t_len || advantages.len() != t_len || t_len == 0 {
        return Err(Error::DimensionMismatch {
            context: "surrogate batch",
            expected: t_len,
            actual: actions.len().min(logged.len()).min(advantages.len()),
        });
    }
    let width = probs[0].len();
    let mut grads = Matrix::zeros(t_len, width);
    let mut objective = 0.0;
    let mut flagged = 0;
    for t in 0..t_len {
        let p = &probs[t];
        let a = actions[t];
        let (den, floored) = clamp_denominator(logged[t]);
        flagged += usize::from(floored);
        let xi = p[a] / den;
        let (value, d_xi, _) = surrogate_terms(xi, 1.0, advantages[t], eps);
        objective += value;
        if d_xi != 0.0 {
            let mut g = vec![0.0; width];
            g[a] = d_xi / den / t_len as f64;
            grads.row_mut(t).copy_from_slice(&softmax_backward(p, &g));
        }
    }
    let objective = objective / t_len as f64;
    if !objective.is_finite() {
        return Err(Error::NonFinite {
            context: "clipped surrogate",
            detail: format!("objective {objective}"),
        });
    }
    Ok(Surrogate {
        objective,
        logit_grads: grads,
        flagged,
    })
}

/// One Adam step uphill on `grads`.
pub fn ascend(net: &mut DenseNet, grads: &NetGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    let mut descent = grads.clone();
    descent.scale(-1.0);
    adam_step(net, &descent, state, lr)
}

/// Layer sizes `[input, hidden.., output]`.
pub fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    sizes
}

/// A policy net with its optimiser state.
#[derive(Clone, Debug)]
pub struct Actor {
    pub net: DenseNet,
    pub adam: AdamState,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], actions: usize, rng: &mut R) -> Result<Self> {
        let net = DenseNet::new(&layer_sizes(input, hidden, actions), rng)?;
        let adam = AdamState::new(&net);
        Ok(Self { net, adam })
    }

    pub fn distribution(&self, input: &[f64]) -> Result<Vec<f64>> {
        PolicyHead::for_net(&self.net).distribution(&self.net, input)
    }

    /// Forward pass over a batch, keeping the cache for backprop.
    pub fn distributions(&self, inputs: &Matrix) -> Result<(ForwardCache, Vec<Vec<f64>>)> {
        let cache = self.net.forward_batch(inputs)?;
        let probs = PolicyHead::for_net(&self.net).distributions(&cache)?;
        Ok((cache, probs))
    }

    /// Backprops logit gradients and takes one ascent step.
    pub fn ascend_logits(&mut self, cache: &ForwardCache, logit_grads: &Matrix, lr: f64) -> Result<()> {
        let grads = self.net.backward_batch(cache, logit_grads)?;
        ascend(&mut self.net, &grads, &mut self.adam, lr)
    }

    /// Plain clipped-surrogate step; returns the pre-step objective.
    pub fn surrogate_step(
        &mut self,
        inputs: &Matrix,
        actions: &[usize],
        logged: &[f64],
        advantages: &[f64],
        hyper: &PpoHyper,
    ) -> Result<f64> {
        let (cache, probs) = self.distributions(inputs)?;
        let s = clipped_surrogate(&probs, actions, logged, advantages, hyper.clip_eps)?;
        self.ascend_logits(&cache, &s.logit_grads, hyper.actor_lr)?;
        Ok(s.objective)
    }
}

/// A scalar value net with its optimiser state.
#[derive(Clone, Debug)]
pub struct Critic {
    pub net: DenseNet,
    pub adam: AdamState,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let net = DenseNet::new(&layer_sizes(input, hidden, 1), rng)?;
        let adam = AdamState::new(&net);
        Ok(Self { net, adam })
    }

    pub fn values(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        value_predictions(&self.net, inputs)
    }

    /// GAE advantages of `rewards` under the current critic.
    pub fn advantages(&self, inputs: &Matrix, rewards: &[f64], hyper: &PpoHyper) -> Result<Vec<f64>> {
        let values = with_terminal_bootstrap(self.values(inputs)?);
        gae(rewards, &values, hyper.gamma, hyper.gae_lambda)
    }

    /// One descent step on the return-to-go regression; returns the loss.
    pub fn regress(&mut self, inputs: &Matrix, rewards: &[f64], hyper: &PpoHyper) -> Result<f64> {
        let targets = returns_to_go(rewards, hyper.gamma);
        let (loss, grads) = value_loss_and_grad(&self.net, inputs, &targets)?;
        adam_step(&mut self.net, &grads, &mut self.adam, hyper.critic_lr)?;
        Ok(loss)
    }
}

/// Logged behaviour probability of each agent-`i` action in the batch.
pub fn logged_probs(batch: &TrajectoryBatch, agent: usize) -> Vec<f64> {
    batch
        .behavior
        .iter()
        .zip(&batch.steps)
        .map(|(dists, step)| dists[agent][step.actions.0[agent]])
        .collect()
}
