//! Each check returns a signed margin: non-negative means the inequality
//! holds. The policy-difference identity returns an absolute residual.

use super::{
    exact_evaluate, max_factor_kl, max_joint_kl, zeta, zeta_joint, ExactSolution, SuggestionCollection,
    TabularMmdp, TabularPolicy,
};
use crate::error::Result;

/// `|η(new) − η(old) − Σ_s d^new(s) Σ_a π_new(a|s) Σ_i A_i^old(s,a)|`.
pub fn check_policy_difference_identity(
    mmdp: &TabularMmdp,
    old: &TabularPolicy,
    new: &TabularPolicy,
) -> Result<f64> {
    let so = exact_evaluate(mmdp, old)?;
    let sn = exact_evaluate(mmdp, new)?;
    let mut predicted = 0.0;
    for s in 0..mmdp.n_states {
        let row = new.joint_row(mmdp, s);
        for (a, p) in row.iter().enumerate() {
            let total: f64 = so.adv.iter().map(|ai| ai[s][a]).sum();
            predicted += sn.visitation[s] * p * total;
        }
    }
    Ok((sn.eta - so.eta - predicted).abs())
}

/// Penalty coefficient `4 max|Σ_i A_i| γ / (1−γ)²`.
pub fn kl_coefficient(mmdp: &TabularMmdp, old: &ExactSolution) -> f64 {
    let g = mmdp.gamma;
    4.0 * old.max_abs_total_adv() * g / ((1.0 - g) * (1.0 - g))
}

/// `η(new) − [η(old) + ζ_old(new) − C·max_s KL(old‖new)]`.
pub fn check_lemma1(mmdp: &TabularMmdp, old: &TabularPolicy, new: &TabularPolicy) -> Result<f64> {
    let so = exact_evaluate(mmdp, old)?;
    let sn = exact_evaluate(mmdp, new)?;
    let bound = so.eta + zeta_joint(mmdp, &so, new) - kl_coefficient(mmdp, &so) * max_joint_kl(mmdp, old, new);
    Ok(sn.eta - bound)
}

/// The quadratic slack of the suggestion bound, without the ζ gap:
/// `Σ_i ½ max|A_i| (|A|·‖d‖² + Σ_{s,a} (π̃^i − π)²)`.
pub fn suggestion_slack(
    mmdp: &TabularMmdp,
    reference: &ExactSolution,
    policy: &TabularPolicy,
    collection: &SuggestionCollection,
) -> f64 {
    let ja = mmdp.joint_count() as f64;
    let d_sq: f64 = reference.visitation.iter().map(|d| d * d).sum();
    let mut slack = 0.0;
    for (i, tilde) in collection.per_agent.iter().enumerate() {
        let mut gap = 0.0;
        for s in 0..mmdp.n_states {
            let t = tilde.joint_row(mmdp, s);
            let p = policy.joint_row(mmdp, s);
            gap += t.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        slack += 0.5 * reference.max_abs_adv(i) * (ja * d_sq + gap);
    }
    slack
}

/// Slack minus `ζ(Π̃) − ζ(π)`, both evaluated with `reference`'s advantages.
pub fn check_lemma2(
    mmdp: &TabularMmdp,
    reference: &TabularPolicy,
    policy: &TabularPolicy,
    collection: &SuggestionCollection,
) -> Result<f64> {
    let so = exact_evaluate(mmdp, reference)?;
    let gap = zeta(mmdp, &so, collection) - zeta_joint(mmdp, &so, policy);
    Ok(suggestion_slack(mmdp, &so, policy, collection) - gap)
}

/// `η(new) − RHS` where the right-hand side lower-bounds the new return
/// through the suggestions and per-agent KL terms.
pub fn check_theorem1(
    mmdp: &TabularMmdp,
    old: &TabularPolicy,
    new: &TabularPolicy,
    suggestions: &SuggestionCollection,
) -> Result<f64> {
    let so = exact_evaluate(mmdp, old)?;
    let sn = exact_evaluate(mmdp, new)?;
    let kl_sum: f64 = old
        .tables
        .iter()
        .zip(&new.tables)
        .map(|(o, n)| max_factor_kl(o, n))
        .sum();
    let rhs = so.eta + zeta(mmdp, &so, suggestions)
        - kl_coefficient(mmdp, &so) * kl_sum
        - suggestion_slack(mmdp, &so, new, suggestions);
    Ok(sn.eta - rhs)
}

/// `Σ_i max_s KL_i − max_s KL_joint`.
pub fn check_kl_subadditivity(mmdp: &TabularMmdp, old: &TabularPolicy, new: &TabularPolicy) -> Result<f64> {
    let per_agent: f64 = old
        .tables
        .iter()
        .zip(&new.tables)
        .map(|(o, n)| max_factor_kl(o, n))
        .sum();
    Ok(per_agent - max_joint_kl(mmdp, old, new))
}
