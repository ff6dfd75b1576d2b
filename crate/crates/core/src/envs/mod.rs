//! The four benchmark environments and a closed enum that dispatches over them.

pub mod cleanup;
pub mod grid;
pub mod harvest;
pub mod navigation;
pub mod predation;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cleanup::{CleanupConfig, CleanupWorld};
pub use harvest::{HarvestConfig, HarvestWorld};
pub use navigation::{NavigationConfig, NavigationWorld};
pub use predation::{PredationConfig, PredationWorld};

use crate::error::{Error, Result};
use crate::mmdp::{AgentLayout, EnvState, Environment, JointAction, SimRng, StepOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Cleanup,
    Harvest,
    Navigation,
    Predation,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [Self::Cleanup, Self::Harvest, Self::Navigation, Self::Predation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cleanup => "cleanup",
            Self::Harvest => "harvest",
            Self::Navigation => "navigation",
            Self::Predation => "predation",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config {
                field: "env.kind".into(),
                message: format!("unknown environment `{s}`; expected one of cleanup, harvest, navigation, predation"),
            })
    }
}

/// Every environment's constants; `kind` picks which one is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    #[serde(default)]
    pub cleanup: CleanupConfig,
    #[serde(default)]
    pub harvest: HarvestConfig,
    #[serde(default)]
    pub navigation: NavigationConfig,
    #[serde(default)]
    pub predation: PredationConfig,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            cleanup: CleanupConfig::default(),
            harvest: HarvestConfig::default(),
            navigation: NavigationConfig::default(),
            predation: PredationConfig::default(),
        }
    }

    pub fn n_agents(&self) -> usize {
        match self.kind {
            EnvKind::Cleanup => self.cleanup.n_agents,
            EnvKind::Harvest => self.harvest.n_agents,
            EnvKind::Navigation => self.navigation.n_agents,
            EnvKind::Predation => self.predation.n_agents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EnvKind::Cleanup => self.cleanup.validate(),
            EnvKind::Harvest => self.harvest.validate(),
            EnvKind::Navigation => self.navigation.validate(),
            EnvKind::Predation => {
                let p = &self.predation;
                if p.n_agents == 0 || p.length <= 0.0 || p.step_size <= 0.0 {
                    return Err(Error::Config {
                        field: "env.predation".into(),
                        message: "agents, length and step size must be positive".into(),
                    });
                }
                Ok(())
            }
        }
    }

    pub fn build(&self) -> Result<Env> {
        self.validate()?;
        Ok(match self.kind {
            EnvKind::Cleanup => Env::Cleanup(CleanupWorld::new(self.cleanup.clone())),
            EnvKind::Harvest => Env::Harvest(HarvestWorld::new(self.harvest.clone())),
            EnvKind::Navigation => Env::Navigation(NavigationWorld::new(self.navigation.clone())),
            EnvKind::Predation => Env::Predation(PredationWorld::new(self.predation.clone())),
        })
    }
}

#[derive(Clone, Debug)]
pub enum Env {
    Cleanup(CleanupWorld),
    Harvest(HarvestWorld),
    Navigation(NavigationWorld),
    Predation(PredationWorld),
}

macro_rules! dispatch {
    ($self:expr, $w:ident => $body:expr) => {
        match $self {
            Env::Cleanup($w) => $body,
            Env::Harvest($w) => $body,
            Env::Navigation($w) => $body,
            Env::Predation($w) => $body,
        }
    };
}

impl Env {
    pub fn kind(&self) -> EnvKind {
        match self {
            Env::Cleanup(_) => EnvKind::Cleanup,
            Env::Harvest(_) => EnvKind::Harvest,
            Env::Navigation(_) => EnvKind::Navigation,
            Env::Predation(_) => EnvKind::Predation,
        }
    }
}

impl Environment for Env {
    fn name(&self) -> &'static str {
        dispatch!(self, w => w.name())
    }

    fn n_agents(&self) -> usize {
        dispatch!(self, w => w.n_agents())
    }

    fn action_counts(&self) -> Vec<usize> {
        dispatch!(self, w => w.action_counts())
    }

    fn horizon(&self) -> usize {
        dispatch!(self, w => w.horizon())
    }

    fn observation_dim(&self) -> usize {
        dispatch!(self, w => w.observation_dim())
    }

    fn input_scale(&self) -> f64 {
        dispatch!(self, w => w.input_scale())
    }

    fn reset(&mut self, rng: &mut SimRng) -> EnvState {
        dispatch!(self, w => w.reset(rng))
    }

    fn step(&mut self, action: &JointAction, rng: &mut SimRng) -> Result<StepOutcome> {
        dispatch!(self, w => w.step(action, rng))
    }

    fn layout(&self, state: &EnvState) -> AgentLayout {
        dispatch!(self, w => w.layout(state))
    }

    fn render_ascii(&self) -> String {
        dispatch!(self, w => w.render_ascii())
    }
}
