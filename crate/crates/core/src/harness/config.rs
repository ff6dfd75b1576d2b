//! Experiment configuration as a TOML tree.
//!
//! A config file only needs `env.kind` and whatever it wants to change: it
//! is merged over the defaults for that environment before being checked
//! against the schema. Overrides of the form `a.b.c=value` are applied to the
//! file's tree before the merge.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::envs::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::learner::{Algorithm, LearnerSpec};
use crate::ppo::PpoHyper;
use crate::ss::SsHyper;
use crate::topology::{CommSchedule, Protocol};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperConfig {
    pub clip_eps: f64,
    /// Inner iterations K per episode.
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub rho: f64,
}

impl HyperConfig {
    pub fn ss(&self) -> SsHyper {
        SsHyper {
            ppo: PpoHyper {
                clip_eps: self.clip_eps,
                epochs: self.epochs,
                gamma: self.gamma,
                gae_lambda: self.gae_lambda,
                actor_lr: self.actor_lr,
                critic_lr: self.critic_lr,
            },
            rho: self.rho,
        }
    }
}

/// Hidden layer widths; input and output sizes follow the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Weight of the intrinsic reward used by `imr`.
    pub imr_beta: f64,
    pub env: EnvConfig,
    pub hyper: HyperConfig,
    pub networks: NetworkConfig,
    pub topology: Protocol,
    pub schedule: CommSchedule,
}

impl ExperimentConfig {
    /// Suggestion sharing with the per-environment defaults.
    pub fn defaults(kind: EnvKind) -> Self {
        let (actor_lr, rho, hidden, topology, episodes) = match kind {
            EnvKind::Cleanup => (1e-5, 1e3, vec![1024, 256], Protocol::Full, 2000),
            EnvKind::Harvest => (5e-5, 0.1, vec![1024, 256], Protocol::Full, 2000),
            EnvKind::Predation => (1e-4, 0.1, vec![128, 64], Protocol::Distance { radius: 0.1 }, 3000),
            EnvKind::Navigation => (1e-5, 1.0, vec![128, 64], Protocol::GridAdjacent, 2000),
        };
        Self {
            algorithm: Algorithm::Ss,
            episodes,
            seeds: (0..5).collect(),
            out_dir: PathBuf::from("runs").join(kind.as_str()),
            imr_beta: 1.0,
            env: EnvConfig::new(kind),
            hyper: HyperConfig {
                clip_eps: 0.2,
                epochs: 3,
                gamma: 0.99,
                gae_lambda: 0.98,
                actor_lr,
                critic_lr: 1e-4,
                rho,
            },
            networks: NetworkConfig {
                actor_hidden: hidden.clone(),
                critic_hidden: hidden,
            },
            topology,
            schedule: CommSchedule::default(),
        }
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut user: Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        Self::resolve(user)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    /// Defaults for `kind` with overrides applied, for runs without a file.
    pub fn from_overrides(kind: EnvKind, overrides: &[String]) -> Result<Self> {
        let mut user = Table::new();
        apply_override(&mut user, &format!("env.kind=\"{kind}\""))?;
        for o in overrides {
            apply_override(&mut user, o)?;
        }
        Self::resolve(user)
    }

    fn resolve(user: Table) -> Result<Self> {
        let kind = user
            .get("env")
            .and_then(|e| e.get("kind"))
            .ok_or_else(|| Error::Config {
                field: "env.kind".into(),
                message: "missing; expected one of cleanup, harvest, navigation, predation".into(),
            })?
            .as_str()
            .ok_or_else(|| Error::Config {
                field: "env.kind".into(),
                message: "must be a string".into(),
            })?
            .parse::<EnvKind>()?;
        let mut base = Value::try_from(Self::defaults(kind)).map_err(|e| Error::Parse(e.to_string()))?;
        if let Value::Table(t) = &mut base {
            merge(t, user);
        }
        let cfg: Self = serde_path_to_error::deserialize(base).map_err(|e| Error::Config {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        self.env.validate()?;
        self.hyper.ss().validate()?;
        self.topology.validate(self.env.n_agents())?;
        CommSchedule::new(self.schedule.period)?;
        if !self.algorithm.supports(self.env.kind) {
            return bad(
                "algorithm",
                format!("{} does not support environment {}", self.algorithm, self.env.kind),
            );
        }
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "seeds must be distinct".into());
        }
        if self.networks.actor_hidden.contains(&0) || self.networks.critic_hidden.contains(&0) {
            return bad("networks", "hidden widths must be positive".into());
        }
        if !self.imr_beta.is_finite() {
            return bad("imr_beta", "must be finite".into());
        }
        Ok(())
    }

    /// Builder input for a learner on an environment with the given shape.
    pub fn learner_spec(&self, obs_dim: usize, action_counts: Vec<usize>, input_scale: f64) -> LearnerSpec {
        LearnerSpec {
            algorithm: self.algorithm,
            env: self.env.kind,
            obs_dim,
            action_counts,
            input_scale,
            actor_hidden: self.networks.actor_hidden.clone(),
            critic_hidden: self.networks.critic_hidden.clone(),
            hyper: self.hyper.ss(),
            imr_beta: self.imr_beta,
        }
    }
}

/// Recursively overlays `user` on `base`. A `topology` table that names its
/// own `kind` replaces the default outright, since variant fields differ.
fn merge(base: &mut Table, user: Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(u)) if !(key == "topology" && u.contains_key("kind")) => {
                merge(b, u)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Applies `a.b.c=value` to a TOML tree. The value is read as a TOML
/// literal, falling back to a bare string.
pub fn apply_override(tree: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| Error::Config {
        field: assignment.into(),
        message: "override must look like key.path=value".into(),
    })?;
    let path = path.trim();
    let raw = raw.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config {
            field: path.into(),
            message: "empty key segment".into(),
        });
    }
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = tree;
    for k in parents {
        let entry = node.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        node = match entry {
            Value::Table(t) => t,
            _ => {
                return Err(Error::Config {
                    field: path.into(),
                    message: format!("`{k}` is not a table"),
                })
            }
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Parses `N`, `N..M` (exclusive) or `N..=M`.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config {
        field: "seeds".into(),
        message: format!("expected N, N..M or N..=M, got `{text}`"),
    };
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..=") {
        (num(a)?..=num(b)?).collect()
    } else if let Some((a, b)) = text.split_once("..") {
        (num(a)?..num(b)?).collect()
    } else {
        vec![num(text)?]
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}
