//! The common interface every algorithm implements and the factory that
//! builds one from a name.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{PpoLearner, PsLearner};
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::mmdp::{JointPolicy, TrajectoryBatch};
use crate::ss::{SsHyper, SsLearner, SuggestingPolicySet};
use crate::topology::{CommSchedule, EpisodeTopology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Suggestion sharing.
    Ss,
    /// Value-parameter consensus.
    Vps,
    /// Neighbourhood-averaged value outputs.
    Vs,
    /// Joint-policy banks with parameter consensus.
    Ps,
    /// Central value on the summed reward.
    Cl,
    /// Intrinsic moral reward.
    Imr,
    /// Independent learners, no sharing.
    Ippo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [Self::Ss, Self::Vps, Self::Vs, Self::Ps, Self::Cl, Self::Imr, Self::Ippo];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ss => "ss",
            Self::Vps => "vps",
            Self::Vs => "vs",
            Self::Ps => "ps",
            Self::Cl => "cl",
            Self::Imr => "imr",
            Self::Ippo => "ippo",
        }
    }

    /// Whether the algorithm can run on `env`.
    pub fn supports(self, env: EnvKind) -> bool {
        !(self == Self::Imr && env == EnvKind::Navigation)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| Error::Config {
            field: "algorithm".into(),
            message: format!("unknown algorithm `{s}`; valid names are ss, vps, vs, ps, cl, imr, ippo"),
        })
    }
}

/// Episode-level information passed to [`Learner::update`].
pub struct UpdateContext<'a> {
    pub topology: &'a EpisodeTopology,
    pub schedule: CommSchedule,
    /// Index of the episode being learned from; the schedule counts episodes.
    pub episode: u64,
}

impl UpdateContext<'_> {
    pub fn communicates(&self) -> bool {
        self.schedule.should_communicate(self.episode)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    /// Share or consensus rounds performed.
    pub shares: usize,
    /// Ratio denominators that hit the floor.
    pub flagged: usize,
    pub policy_objective: f64,
    pub value_loss: f64,
}

pub trait Learner: JointPolicy + Send {
    fn algorithm(&self) -> Algorithm;

    /// Runs the inner iterations on one episode's batch.
    fn update(&mut self, batch: &TrajectoryBatch, ctx: &UpdateContext<'_>) -> Result<UpdateStats>;

    /// The suggestion nets, for learners that have them.
    fn suggesting_set(&self) -> Option<&SuggestingPolicySet> {
        None
    }
}

/// Everything needed to construct a learner for one environment.
#[derive(Clone, Debug)]
pub struct LearnerSpec {
    pub algorithm: Algorithm,
    pub env: EnvKind,
    pub obs_dim: usize,
    pub action_counts: Vec<usize>,
    pub input_scale: f64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub hyper: SsHyper,
    pub imr_beta: f64,
}

pub fn build_learner<R: Rng + ?Sized>(spec: &LearnerSpec, rng: &mut R) -> Result<Box<dyn Learner>> {
    spec.hyper.validate()?;
    if !spec.algorithm.supports(spec.env) {
        return Err(Error::UnsupportedEnvironment {
            algorithm: spec.algorithm.to_string(),
            env: spec.env.to_string(),
        });
    }
    Ok(match spec.algorithm {
        Algorithm::Ss => Box::new(SsLearner::new(
            SuggestingPolicySet::new(
                spec.obs_dim,
                &spec.action_counts,
                &spec.actor_hidden,
                &spec.critic_hidden,
                spec.input_scale,
                rng,
            )?,
            spec.hyper.clone(),
        )),
        Algorithm::Ps => Box::new(PsLearner::new(spec, rng)?),
        _ => Box::new(PpoLearner::new(spec, rng)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        let err = "maddpg".parse::<Algorithm>().unwrap_err().to_string();
        assert!(err.contains("ss, vps, vs, ps, cl, imr, ippo"), "{err}");
    }

    #[test]
    fn imr_rejects_navigation() {
        assert!(!Algorithm::Imr.supports(EnvKind::Navigation));
        assert!(Algorithm::Imr.supports(EnvKind::Cleanup));
    }
}
