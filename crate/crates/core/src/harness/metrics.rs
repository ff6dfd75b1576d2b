//! Per-episode metrics and their CSV form.
//!
//! Columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `seed` | run seed |
//! | `episode` | 0-based episode index |
//! | `normalized_return` | undiscounted reward summed over agents and steps, divided by N·T |
//! | `agent_returns` | per-agent undiscounted episode returns, `;`-separated |
//! | `cc_rate`, `cd_rate`, `dd_rate` | 2-agent Predation: fraction of steps where both, one, or neither agent moved towards the prey; empty otherwise |
//! | `suggestion_proportion` | 2-agent SS on Predation: for pairs (0→1, 1→0), mean probability the suggestion for the peer is the move towards the prey; empty otherwise |
//! | `mse_discrepancy` | same pairs: mean squared L2 distance between the peer's own distribution and the suggestion for it |
//!
//! Both pair metrics are averaged over the episode's visited states after the
//! episode's update.

use serde::{Deserialize, Serialize};

use crate::envs::predation::{classify, toward_action, Move};
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::mmdp::{EnvState, JointAction};
use crate::ss::SuggestingPolicySet;

pub const CSV_COLUMNS: [&str; 9] = [
    "seed",
    "episode",
    "normalized_return",
    "agent_returns",
    "cc_rate",
    "cd_rate",
    "dd_rate",
    "suggestion_proportion",
    "mse_discrepancy",
];

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub seed: u64,
    pub episode: usize,
    pub normalized_return: f64,
    pub agent_returns: Vec<f64>,
    pub rates: Option<JointRates>,
    /// Indexed by ordered pair (0→1, 1→0).
    pub suggestion_proportion: Option<Vec<f64>>,
    pub mse_discrepancy: Option<Vec<f64>>,
}

/// Shape of one CSV line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub seed: u64,
    pub episode: usize,
    pub normalized_return: f64,
    pub agent_returns: String,
    pub cc_rate: Option<f64>,
    pub cd_rate: Option<f64>,
    pub dd_rate: Option<f64>,
    pub suggestion_proportion: Option<String>,
    pub mse_discrepancy: Option<String>,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn split(text: &str) -> Result<Vec<f64>> {
    text.split(';')
        .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("`{v}`: {e}"))))
        .collect()
}

impl MetricRow {
    pub fn is_finite(&self) -> bool {
        let mut all = vec![self.normalized_return];
        all.extend(&self.agent_returns);
        if let Some(r) = &self.rates {
            all.extend([r.cc, r.cd, r.dd]);
        }
        all.extend(self.suggestion_proportion.iter().flatten());
        all.extend(self.mse_discrepancy.iter().flatten());
        all.iter().all(|x| x.is_finite())
    }

    pub fn to_record(&self) -> CsvRecord {
        CsvRecord {
            seed: self.seed,
            episode: self.episode,
            normalized_return: self.normalized_return,
            agent_returns: join(&self.agent_returns),
            cc_rate: self.rates.map(|r| r.cc),
            cd_rate: self.rates.map(|r| r.cd),
            dd_rate: self.rates.map(|r| r.dd),
            suggestion_proportion: self.suggestion_proportion.as_deref().map(join),
            mse_discrepancy: self.mse_discrepancy.as_deref().map(join),
        }
    }

    pub fn from_record(r: &CsvRecord) -> Result<Self> {
        let rates = match (r.cc_rate, r.cd_rate, r.dd_rate) {
            (Some(cc), Some(cd), Some(dd)) => Some(JointRates { cc, cd, dd }),
            (None, None, None) => None,
            _ => return Err(Error::Parse("rate columns must be all present or all empty".into())),
        };
        Ok(Self {
            seed: r.seed,
            episode: r.episode,
            normalized_return: r.normalized_return,
            agent_returns: split(&r.agent_returns)?,
            rates,
            suggestion_proportion: r.suggestion_proportion.as_deref().map(split).transpose()?,
            mse_discrepancy: r.mse_discrepancy.as_deref().map(split).transpose()?,
        })
    }
}

/// Writes rows with a header line.
pub fn write_csv<W: std::io::Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        if !row.is_finite() {
            return Err(Error::NonFinite {
                context: "metric row",
                detail: format!("seed {} episode {}", row.seed, row.episode),
            });
        }
        w.serialize(row.to_record()).map_err(|e| Error::Parse(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows back, checking the header matches [`CSV_COLUMNS`].
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }
    r.deserialize::<CsvRecord>()
        .map(|rec| MetricRow::from_record(&rec.map_err(|e| Error::Parse(e.to_string()))?))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointLabel {
    CC,
    CD,
    DD,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointRates {
    pub cc: f64,
    pub cd: f64,
    pub dd: f64,
}

fn require_two_agent_predation(env: EnvKind, n_agents: usize) -> Result<()> {
    if env != EnvKind::Predation || n_agents != 2 {
        return Err(Error::InvalidInput(format!(
            "joint cooperation labels need 2-agent predation, got {n_agents}-agent {env}"
        )));
    }
    Ok(())
}

/// Labels one step by how many of the two agents moved towards the prey.
pub fn classify_joint_step(env: EnvKind, state: &EnvState, action: &JointAction) -> Result<JointLabel> {
    require_two_agent_predation(env, action.0.len())?;
    if state.observation.len() != 2 {
        return Err(Error::DimensionMismatch {
            context: "predation state",
            expected: 2,
            actual: state.observation.len(),
        });
    }
    let c = (0..2)
        .filter(|&i| classify(state.observation[i], action.0[i]) == Move::Cooperate)
        .count();
    Ok(match c {
        2 => JointLabel::CC,
        1 => JointLabel::CD,
        _ => JointLabel::DD,
    })
}

/// Label frequencies over an episode.
pub fn joint_rates(env: EnvKind, steps: &[(&EnvState, &JointAction)]) -> Result<JointRates> {
    if steps.is_empty() {
        return Err(Error::InvalidInput("no steps to classify".into()));
    }
    let mut counts = [0usize; 3];
    for (s, a) in steps {
        counts[classify_joint_step(env, s, a)? as usize] += 1;
    }
    let t = steps.len() as f64;
    Ok(JointRates {
        cc: counts[0] as f64 / t,
        cd: counts[1] as f64 / t,
        dd: counts[2] as f64 / t,
    })
}

/// The ordered pairs reported for two agents.
pub const PAIRS: [(usize, usize); 2] = [(0, 1), (1, 0)];

/// For each pair `(i, j)`, the mean of π^{ij}(towards|s) over `states`.
/// States where agent j sits on the prey have no towards move and are
/// skipped; a pair with no usable state reports 0.
pub fn suggestion_proportion(set: &SuggestingPolicySet, states: &[&EnvState]) -> Result<Vec<f64>> {
    require_two_agent_predation(EnvKind::Predation, set.n_agents())?;
    PAIRS
        .iter()
        .map(|&(i, j)| {
            let mut total = 0.0;
            let mut used = 0usize;
            for s in states {
                if let Some(a) = toward_action(s.observation[j]) {
                    total += set.distribution(i, j, s)?[a];
                    used += 1;
                }
            }
            Ok(if used == 0 { 0.0 } else { total / used as f64 })
        })
        .collect()
}

/// For each pair `(i, j)`, the mean of `‖π^{jj}(·|s) − π^{ij}(·|s)‖²`.
pub fn mse_discrepancy(set: &SuggestingPolicySet, states: &[&EnvState]) -> Result<Vec<f64>> {
    require_two_agent_predation(EnvKind::Predation, set.n_agents())?;
    if states.is_empty() {
        return Err(Error::InvalidInput("no states to average over".into()));
    }
    PAIRS
        .iter()
        .map(|&(i, j)| {
            let mut total = 0.0;
            for s in states {
                let own = set.distribution(j, j, s)?;
                let sugg = set.distribution(i, j, s)?;
                total += squared_distance(&own, &sugg);
            }
            Ok(total / states.len() as f64)
        })
        .collect()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean of `f` over the last `fraction` of rows (at least one row).
pub fn final_window_mean(rows: &[MetricRow], fraction: f64, f: impl Fn(&MetricRow) -> f64) -> f64 {
    let k = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len().max(1));
    let tail = &rows[rows.len().saturating_sub(k)..];
    tail.iter().map(f).sum::<f64>() / tail.len().max(1) as f64
}

/// Mean of `f` over the first `fraction` of rows.
pub fn initial_window_mean(rows: &[MetricRow], fraction: f64, f: impl Fn(&MetricRow) -> f64) -> f64 {
    let k = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len().max(1));
    let head = &rows[..k.min(rows.len())];
    head.iter().map(f).sum::<f64>() / head.len().max(1) as f64
}
