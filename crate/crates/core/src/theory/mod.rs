//! Exact evaluation of small tabular Markov games and numerical checks of
//! the return-improvement bounds behind suggestion sharing.
//!
//! Visitation weights `d^π(s) = Σ_t γ^t P(s_t = s)` are unnormalised
//! throughout (they sum to `1/(1−γ)`), and ζ is the corresponding weighted
//! sum rather than a normalised expectation.

pub mod checks;
pub mod sweep;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checks::{
    check_kl_subadditivity, check_lemma1, check_lemma2, check_policy_difference_identity, check_theorem1,
};
pub use sweep::{random_instance, run_sweep, Instance, SweepReport};

/// A Markov game small enough for dense linear algebra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMmdp {
    pub n_states: usize,
    pub action_counts: Vec<usize>,
    /// `transitions[s][a][s']` for joint action index `a`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[i][s][a]`.
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    pub initial: Vec<f64>,
}

impl TabularMmdp {
    pub fn n_agents(&self) -> usize {
        self.action_counts.len()
    }

    pub fn joint_count(&self) -> usize {
        self.action_counts.iter().product()
    }

    /// Per-agent actions of a joint index; agent 0 varies slowest.
    pub fn decode(&self, mut joint: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents()];
        for i in (0..self.n_agents()).rev() {
            out[i] = joint % self.action_counts[i];
            joint /= self.action_counts[i];
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let ja = self.joint_count();
        let bad = |m: &str| Err(Error::InvalidInput(format!("tabular game: {m}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0,1)");
        }
        if self.transitions.len() != self.n_states || self.initial.len() != self.n_states {
            return bad("state dimension mismatch");
        }
        for row in self.transitions.iter().flatten() {
            if row.len() != self.n_states || !is_distribution(row) {
                return bad("transition rows must be probability vectors");
            }
        }
        if self.transitions.iter().any(|r| r.len() != ja) {
            return bad("transition action dimension mismatch");
        }
        if self.rewards.len() != self.n_agents()
            || self.rewards.iter().any(|r| r.len() != self.n_states || r.iter().any(|x| x.len() != ja))
        {
            return bad("reward tensor shape mismatch");
        }
        if self.rewards.iter().flatten().flatten().any(|r| !r.is_finite()) {
            return bad("rewards must be finite");
        }
        if !is_distribution(&self.initial) {
            return bad("initial distribution must sum to one");
        }
        Ok(())
    }
}

pub(crate) fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|x| *x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

/// Independent per-agent policy tables, `tables[i][s][a_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub tables: Vec<Vec<Vec<f64>>>,
}

impl TabularPolicy {
    pub fn uniform(mmdp: &TabularMmdp) -> Self {
        Self {
            tables: mmdp
                .action_counts
                .iter()
                .map(|&k| vec![vec![1.0 / k as f64; k]; mmdp.n_states])
                .collect(),
        }
    }

    /// Product probability of a joint action.
    pub fn joint_prob(&self, mmdp: &TabularMmdp, s: usize, joint: usize) -> f64 {
        mmdp.decode(joint)
            .iter()
            .enumerate()
            .map(|(i, a)| self.tables[i][s][*a])
            .product()
    }

    pub fn joint_row(&self, mmdp: &TabularMmdp, s: usize) -> Vec<f64> {
        (0..mmdp.joint_count()).map(|a| self.joint_prob(mmdp, s, a)).collect()
    }
}

/// Agent i's suggesting joint policy is `Π_j suggestions[i].tables[j]`,
/// with slot i holding its own policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestionCollection {
    pub per_agent: Vec<TabularPolicy>,
}

impl SuggestionCollection {
    /// Every agent suggests exactly the true policy.
    pub fn faithful(policy: &TabularPolicy) -> Self {
        Self {
            per_agent: vec![policy.clone(); policy.tables.len()],
        }
    }
}

/// Values and visitation of one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactSolution {
    /// `v[i][s]`.
    pub v: Vec<Vec<f64>>,
    /// `q[i][s][a]`.
    pub q: Vec<Vec<Vec<f64>>>,
    /// `adv[i][s][a] = q − v`.
    pub adv: Vec<Vec<Vec<f64>>>,
    /// Collective return `Σ_i E_{s0}[V_i(s0)]`.
    pub eta: f64,
    /// Unnormalised discounted visitation.
    pub visitation: Vec<f64>,
}

impl ExactSolution {
    /// `max_{s,a} |A_i(s,a)|`.
    pub fn max_abs_adv(&self, i: usize) -> f64 {
        self.adv[i].iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `max_{s,a} |Σ_i A_i(s,a)|`.
    pub fn max_abs_total_adv(&self) -> f64 {
        let (ns, ja) = (self.adv[0].len(), self.adv[0][0].len());
        let mut m = 0.0f64;
        for s in 0..ns {
            for a in 0..ja {
                m = m.max(self.adv.iter().map(|ai| ai[s][a]).sum::<f64>().abs());
            }
        }
        m
    }
}

pub fn exact_evaluate(mmdp: &TabularMmdp, policy: &TabularPolicy) -> Result<ExactSolution> {
    let ns = mmdp.n_states;
    let ja = mmdp.joint_count();
    let g = mmdp.gamma;
    let rows: Vec<Vec<f64>> = (0..ns).map(|s| policy.joint_row(mmdp, s)).collect();

    let mut system = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for a in 0..ja {
            for s2 in 0..ns {
                system[(s, s2)] -= g * rows[s][a] * mmdp.transitions[s][a][s2];
            }
        }
    }
    let lu = system.clone().lu();
    let mut v = Vec::with_capacity(mmdp.n_agents());
    for i in 0..mmdp.n_agents() {
        let r = DVector::from_fn(ns, |s, _| (0..ja).map(|a| rows[s][a] * mmdp.rewards[i][s][a]).sum());
        let sol = lu.solve(&r).ok_or(Error::Singular("policy evaluation"))?;
        v.push(sol.iter().copied().collect::<Vec<f64>>());
    }
    let q: Vec<Vec<Vec<f64>>> = (0..mmdp.n_agents())
        .map(|i| {
            (0..ns)
                .map(|s| {
                    (0..ja)
                        .map(|a| {
                            let next: f64 = (0..ns).map(|s2| mmdp.transitions[s][a][s2] * v[i][s2]).sum();
                            mmdp.rewards[i][s][a] + g * next
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let adv = q
        .iter()
        .zip(&v)
        .map(|(qi, vi)| qi.iter().zip(vi).map(|(qs, vs)| qs.iter().map(|x| x - vs).collect()).collect())
        .collect();
    let d0 = DVector::from_column_slice(&mmdp.initial);
    let visitation = system
        .transpose()
        .lu()
        .solve(&d0)
        .ok_or(Error::Singular("discounted visitation"))?
        .iter()
        .copied()
        .collect();
    let eta = v
        .iter()
        .map(|vi| vi.iter().zip(&mmdp.initial).map(|(x, p)| x * p).sum::<f64>())
        .sum();
    Ok(ExactSolution {
        v,
        q,
        adv,
        eta,
        visitation,
    })
}

/// ζ for a suggestion collection: `Σ_i Σ_s d(s) Σ_a π̃^i(a|s) A_i(s,a)`.
pub fn zeta(mmdp: &TabularMmdp, reference: &ExactSolution, collection: &SuggestionCollection) -> f64 {
    let mut total = 0.0;
    for (i, tilde) in collection.per_agent.iter().enumerate() {
        for s in 0..mmdp.n_states {
            let row = tilde.joint_row(mmdp, s);
            let inner: f64 = row.iter().zip(&reference.adv[i][s]).map(|(p, a)| p * a).sum();
            total += reference.visitation[s] * inner;
        }
    }
    total
}

/// ζ of a single joint policy, every agent using the true product.
pub fn zeta_joint(mmdp: &TabularMmdp, reference: &ExactSolution, policy: &TabularPolicy) -> f64 {
    zeta(mmdp, reference, &SuggestionCollection::faithful(policy))
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| if *b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

/// `max_s KL(π_old(·|s) ‖ π_new(·|s))` over joint actions.
pub fn max_joint_kl(mmdp: &TabularMmdp, old: &TabularPolicy, new: &TabularPolicy) -> f64 {
    (0..mmdp.n_states)
        .map(|s| kl(&old.joint_row(mmdp, s), &new.joint_row(mmdp, s)))
        .fold(0.0, f64::max)
}

/// `max_s KL` of one agent's factor.
pub fn max_factor_kl(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    old.iter().zip(new).map(|(p, q)| kl(p, q)).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmdp::{sample_categorical, sim_rng};
    use proptest::prelude::*;

    fn single_state(reward: f64, n: usize) -> TabularMmdp {
        TabularMmdp {
            n_states: 1,
            action_counts: vec![1; n],
            transitions: vec![vec![vec![1.0]]],
            rewards: vec![vec![vec![reward]]; n],
            gamma: 0.5,
            initial: vec![1.0],
        }
    }

    #[test]
    fn single_state_geometric_series() {
        let m = single_state(1.0, 3);
        let sol = exact_evaluate(&m, &TabularPolicy::uniform(&m)).unwrap();
        assert!((sol.v[0][0] - 2.0).abs() < 1e-12);
        assert!((sol.q[1][0][0] - 2.0).abs() < 1e-12);
        assert!(sol.adv[2][0][0].abs() < 1e-12);
        assert!((sol.eta - 6.0).abs() < 1e-12);
        assert!((sol.visitation[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mut m = single_state(0.0, 2);
        m.n_states = 1;
        let sol = exact_evaluate(&m, &TabularPolicy::uniform(&m)).unwrap();
        assert_eq!(sol.eta, 0.0);
        assert!(sol.v.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn decode_is_mixed_radix() {
        let m = TabularMmdp {
            action_counts: vec![2, 3],
            ..single_state(0.0, 2)
        };
        assert_eq!(m.decode(0), vec![0, 0]);
        assert_eq!(m.decode(4), vec![1, 1]);
        assert_eq!(m.decode(5), vec![1, 2]);
    }

    #[test]
    fn eta_matches_monte_carlo() {
        let mut rng = sim_rng(99);
        let inst = loop {
            let inst = random_instance(&mut rng);
            if inst.mmdp.n_states == 4 && inst.mmdp.n_agents() == 2 {
                break inst;
            }
        };
        let m = TabularMmdp { gamma: 0.5, ..inst.mmdp };
        let sol = exact_evaluate(&m, &inst.old).unwrap();
        let joint: Vec<Vec<f64>> = (0..m.n_states).map(|s| inst.old.joint_row(&m, s)).collect();
        let horizon = 40; // 0.5^40 < 1e-12
        let runs = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..runs {
            let mut s = sample_categorical(&m.initial, &mut rng).unwrap();
            let mut ret = 0.0;
            let mut disc = 1.0;
            for _ in 0..horizon {
                let a = sample_categorical(&joint[s], &mut rng).unwrap();
                ret += disc * m.rewards.iter().map(|r| r[s][a]).sum::<f64>();
                disc *= m.gamma;
                s = sample_categorical(&m.transitions[s][a], &mut rng).unwrap();
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / runs as f64;
        let sd = ((sum_sq / runs as f64 - mean * mean) / runs as f64).sqrt();
        assert!((mean - sol.eta).abs() < 3.0 * sd, "mc {mean} exact {} sd {sd}", sol.eta);
    }

    #[test]
    fn zeta_matches_triple_sum() {
        let mut rng = sim_rng(5);
        for _ in 0..20 {
            let inst = random_instance(&mut rng);
            let m = &inst.mmdp;
            let sol = exact_evaluate(m, &inst.old).unwrap();
            let fast = zeta(m, &sol, &inst.suggestions);
            let mut slow = 0.0;
            for i in 0..m.n_agents() {
                for s in 0..m.n_states {
                    for a in 0..m.joint_count() {
                        let acts = m.decode(a);
                        let mut p = 1.0;
                        for (j, aj) in acts.iter().enumerate() {
                            p *= inst.suggestions.per_agent[i].tables[j][s][*aj];
                        }
                        slow += sol.visitation[s] * p * sol.adv[i][s][a];
                    }
                }
            }
            assert!((fast - slow).abs() < 1e-10);
        }
    }

    #[test]
    fn zeta_of_own_policy_is_zero() {
        let mut rng = sim_rng(6);
        let inst = random_instance(&mut rng);
        let sol = exact_evaluate(&inst.mmdp, &inst.old).unwrap();
        assert!(zeta_joint(&inst.mmdp, &sol, &inst.old).abs() < 1e-10);
        let faithful = SuggestionCollection::faithful(&inst.new);
        assert_eq!(zeta(&inst.mmdp, &sol, &faithful), zeta_joint(&inst.mmdp, &sol, &inst.new));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn advantages_average_to_zero_and_visitation_has_geometric_mass(seed in any::<u64>()) {
            let inst = random_instance(&mut sim_rng(seed));
            let m = &inst.mmdp;
            let sol = exact_evaluate(m, &inst.old).unwrap();
            for i in 0..m.n_agents() {
                for s in 0..m.n_states {
                    let row = inst.old.joint_row(m, s);
                    let mean: f64 = row.iter().zip(&sol.adv[i][s]).map(|(p, a)| p * a).sum();
                    prop_assert!(mean.abs() < 1e-10);
                }
            }
            prop_assert!(sol.visitation.iter().all(|d| *d >= -1e-12));
            let mass: f64 = sol.visitation.iter().sum();
            prop_assert!((mass - 1.0 / (1.0 - m.gamma)).abs() < 1e-10);
            // Bellman consistency
            for i in 0..m.n_agents() {
                for s in 0..m.n_states {
                    let row = inst.old.joint_row(m, s);
                    let backed: f64 = row.iter().zip(&sol.q[i][s]).map(|(p, q)| p * q).sum();
                    prop_assert!((backed - sol.v[i][s]).abs() < 1e-10);
                }
            }
        }
    }
}
