//! Suggestion-sharing multi-agent reinforcement learning.
//!
//! Agents learn decentralised policies and, instead of sharing rewards,
//! values or parameters, exchange action suggestions: each agent keeps a
//! small policy net for every neighbour describing how it would like that
//! neighbour to act. The crate bundles
//!
//! - a dense MLP engine with exact backprop and Adam ([`nn`]),
//! - the environment interface and trajectory bookkeeping ([`mmdp`]),
//! - four social-dilemma environments ([`envs`]),
//! - the suggestion-sharing learner and five baselines on one PPO substrate
//!   ([`ss`], [`baselines`], [`ppo`]),
//! - neighbourhood protocols ([`topology`]),
//! - exact tabular checks of the performance bounds ([`theory`]),
//! - configuration, metrics and batch runs ([`harness`]).

pub mod baselines;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod mmdp;
pub mod nn;
pub mod ppo;
pub mod ss;
pub mod theory;
pub mod topology;

pub use envs::{Env, EnvConfig, EnvKind};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, MetricRow};
pub use learner::{Algorithm, Learner};
pub use mmdp::{
    rollout, sim_rng, AgentLayout, DiscountSpec, EnvState, Environment, JointAction, JointPolicy, SimRng,
    StepOutcome, TrajectoryBatch,
};
pub use nn::{AdamState, DenseNet, PolicyHead};
pub use topology::{CommSchedule, Protocol};
