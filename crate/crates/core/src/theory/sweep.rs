//! Random small games and a batch runner over all checks.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{
    check_kl_subadditivity, check_lemma1, check_lemma2, check_policy_difference_identity, check_theorem1,
};
use super::{SuggestionCollection, TabularMmdp, TabularPolicy};
use crate::error::Result;
use crate::mmdp::SimRng;

/// Inequality margins below this count as violations.
pub const INEQUALITY_TOL: f64 = -1e-8;
pub const KL_TOL: f64 = -1e-10;
pub const IDENTITY_TOL: f64 = 1e-8;

/// One draw: a game, an old and new policy, and suggestions for the new one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub mmdp: TabularMmdp,
    pub old: TabularPolicy,
    pub new: TabularPolicy,
    pub suggestions: SuggestionCollection,
}

fn dirichlet_ones<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn random_policy<R: Rng + ?Sized>(n_states: usize, counts: &[usize], rng: &mut R) -> TabularPolicy {
    TabularPolicy {
        tables: counts
            .iter()
            .map(|&k| (0..n_states).map(|_| dirichlet_ones(k, rng)).collect())
            .collect(),
    }
}

pub fn random_instance<R: Rng + ?Sized>(rng: &mut R) -> Instance {
    let n_states = rng.random_range(2..=5);
    let n_agents = rng.random_range(2..=3);
    let counts: Vec<usize> = (0..n_agents).map(|_| rng.random_range(2..=3)).collect();
    let ja: usize = counts.iter().product();
    let gamma = if rng.random_bool(0.5) { 0.5 } else { 0.9 };
    let transitions = (0..n_states)
        .map(|_| (0..ja).map(|_| dirichlet_ones(n_states, rng)).collect())
        .collect();
    let rewards = (0..n_agents)
        .map(|_| {
            (0..n_states)
                .map(|_| (0..ja).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect()
        })
        .collect();
    let mmdp = TabularMmdp {
        n_states,
        action_counts: counts.clone(),
        transitions,
        rewards,
        gamma,
        initial: dirichlet_ones(n_states, rng),
    };
    let old = random_policy(n_states, &counts, rng);
    // New policy: a random step from old so KL terms stay informative.
    let target = random_policy(n_states, &counts, rng);
    let step: f64 = rng.random_range(0.0..1.0);
    let mut new = old.clone();
    for (nt, tt) in new.tables.iter_mut().zip(&target.tables) {
        for (row, trow) in nt.iter_mut().zip(tt) {
            for (p, t) in row.iter_mut().zip(trow) {
                *p = (1.0 - step) * *p + step * t;
            }
        }
    }
    let per_agent = (0..n_agents)
        .map(|i| {
            let mut tilde = random_policy(n_states, &counts, rng);
            tilde.tables[i] = new.tables[i].clone();
            tilde
        })
        .collect();
    Instance {
        mmdp,
        old,
        new,
        suggestions: SuggestionCollection { per_agent },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub evaluated: usize,
    pub violations: usize,
    /// Smallest margin seen; for the identity, the largest residual.
    pub worst: f64,
    /// Instance index behind `worst`.
    pub worst_instance: usize,
    pub counterexample: Option<Instance>,
}

impl CheckSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<CheckSummary>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckSummary::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const CHECK_NAMES: [&str; 5] = ["policy_difference", "lemma1", "lemma2", "theorem1", "kl_subadditivity"];

fn instance_rng(seed: u64, index: usize) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn evaluate(inst: &Instance) -> Result<[f64; 5]> {
    let m = &inst.mmdp;
    Ok([
        check_policy_difference_identity(m, &inst.old, &inst.new)?,
        check_lemma1(m, &inst.old, &inst.new)?,
        check_lemma2(m, &inst.old, &inst.new, &inst.suggestions)?,
        check_theorem1(m, &inst.old, &inst.new, &inst.suggestions)?,
        check_kl_subadditivity(m, &inst.old, &inst.new)?,
    ])
}

/// Draws `instances` games from `seed` and runs every check on each.
pub fn run_sweep(instances: usize, seed: u64) -> Result<SweepReport> {
    let results: Vec<(Instance, [f64; 5])> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let inst = random_instance(&mut instance_rng(seed, k));
            evaluate(&inst).map(|r| (inst, r))
        })
        .collect::<Result<_>>()?;

    let checks = CHECK_NAMES
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let identity = c == 0;
            let violates = |x: f64| {
                if identity {
                    !(x < IDENTITY_TOL)
                } else if c == 4 {
                    !(x >= KL_TOL)
                } else {
                    !(x >= INEQUALITY_TOL)
                }
            };
            let mut worst = if identity { 0.0 } else { f64::INFINITY };
            let mut worst_instance = 0;
            let mut violations = 0;
            let mut counterexample = None;
            for (k, (inst, r)) in results.iter().enumerate() {
                let x = r[c];
                if violates(x) {
                    violations += 1;
                    if counterexample.is_none() {
                        counterexample = Some(inst.clone());
                    }
                }
                let worse = if identity { x > worst } else { x < worst };
                if worse || x.is_nan() {
                    worst = x;
                    worst_instance = k;
                }
            }
            CheckSummary {
                name: name.to_string(),
                evaluated: results.len(),
                violations,
                worst,
                worst_instance,
                counterexample,
            }
        })
        .collect();
    Ok(SweepReport {
        seed,
        instances,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::is_distribution;

    #[test]
    fn instances_are_well_formed() {
        for k in 0..200 {
            let inst = random_instance(&mut instance_rng(3, k));
            inst.mmdp.validate().unwrap();
            assert!((2..=5).contains(&inst.mmdp.n_states));
            assert!((2..=3).contains(&inst.mmdp.n_agents()));
            assert!(inst.mmdp.gamma == 0.5 || inst.mmdp.gamma == 0.9);
            for p in [&inst.old, &inst.new] {
                assert!(p.tables.iter().flatten().all(|r| is_distribution(r)));
            }
            for (i, t) in inst.suggestions.per_agent.iter().enumerate() {
                assert_eq!(t.tables[i], inst.new.tables[i]);
            }
        }
    }

    #[test]
    fn sweep_is_deterministic_and_clean() {
        let a = run_sweep(100, 11).unwrap();
        let b = run_sweep(100, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.passed(), "{a:?}");
        let json = serde_json::to_string(&a).unwrap();
        let back: SweepReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.instances, 100);
    }
}
