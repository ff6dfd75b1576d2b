//! Who talks to whom. `neighbours[i]` is the set 𝒩_i of agents that agent i
//! sends suggestions to and whose shared distributions it consumes.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdp::{AgentLayout, SimRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Everyone is everyone's neighbour.
    Full,
    /// Neighbours lie within `radius` of the segment length (line layouts)
    /// or `radius` times the grid diagonal span in Chebyshev cells.
    Distance { radius: f64 },
    /// Each agent picks `m` out-neighbours uniformly, once per episode.
    RandomM { m: usize },
    /// Chebyshev distance at most one cell.
    GridAdjacent,
    /// No communication at all.
    Isolated,
}

impl Protocol {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        match self {
            Protocol::Distance { radius } if !(radius.is_finite() && *radius > 0.0) => Err(Error::Config {
                field: "topology.radius".into(),
                message: format!("must be positive, got {radius}"),
            }),
            Protocol::RandomM { m } if *m + 1 > n_agents.max(1) => Err(Error::Config {
                field: "topology.m".into(),
                message: format!("must be at most N-1 = {}, got {m}", n_agents.saturating_sub(1)),
            }),
            _ => Ok(()),
        }
    }
}

/// Adjacency lists for one step, sorted and without self-loops.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Adjacency {
    pub neighbours: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            neighbours: vec![Vec::new(); n],
        }
    }

    pub fn full(n: usize) -> Self {
        Self {
            neighbours: (0..n).map(|i| (0..n).filter(|j| *j != i).collect()).collect(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.neighbours.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbours[i].binary_search(&j).is_ok()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n_agents()).all(|i| self.neighbours[i].iter().all(|j| self.contains(*j, i)))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum()
    }

    /// Union of edges with `other`.
    pub fn union(&self, other: &Adjacency) -> Adjacency {
        let neighbours = self
            .neighbours
            .iter()
            .zip(&other.neighbours)
            .map(|(a, b)| {
                let mut merged: Vec<usize> = a.iter().chain(b).copied().collect();
                merged.sort_unstable();
                merged.dedup();
                merged
            })
            .collect();
        Adjacency { neighbours }
    }

    fn from_predicate(n: usize, linked: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            neighbours: (0..n).map(|i| (0..n).filter(|j| *j != i && linked(i, *j)).collect()).collect(),
        }
    }
}

/// Neighbourhoods for a single layout. `random_m` draws from `rng`.
pub fn build_neighbors(protocol: &Protocol, layout: &AgentLayout, rng: &mut SimRng) -> Result<Adjacency> {
    let n = match layout {
        AgentLayout::Line { positions, .. } => positions.len(),
        AgentLayout::Grid { cells, .. } => cells.len(),
    };
    protocol.validate(n)?;
    Ok(match protocol {
        Protocol::Full => Adjacency::full(n),
        Protocol::Isolated => Adjacency::empty(n),
        Protocol::RandomM { m } => {
            let neighbours = (0..n)
                .map(|i| {
                    let mut picks: Vec<usize> = sample(rng, n - 1, *m).iter().map(|k| if k >= i { k + 1 } else { k }).collect();
                    picks.sort_unstable();
                    picks
                })
                .collect();
            Adjacency { neighbours }
        }
        Protocol::Distance { radius } => match layout {
            AgentLayout::Line { positions, extent } => {
                Adjacency::from_predicate(n, |i, j| (positions[i] - positions[j]).abs() / extent <= *radius + 1e-12)
            }
            AgentLayout::Grid { cells, rows, cols } => {
                let span = (rows.max(cols) - 1).max(1) as f64;
                Adjacency::from_predicate(n, |i, j| {
                    let d = (cells[i].0 - cells[j].0).abs().max((cells[i].1 - cells[j].1).abs());
                    d as f64 / span <= *radius + 1e-12
                })
            }
        },
        Protocol::GridAdjacent => match layout {
            AgentLayout::Grid { cells, .. } => Adjacency::from_predicate(n, |i, j| {
                (cells[i].0 - cells[j].0).abs().max((cells[i].1 - cells[j].1).abs()) <= 1
            }),
            AgentLayout::Line { positions, .. } => {
                Adjacency::from_predicate(n, |i, j| (positions[i] - positions[j]).abs() <= 1.0)
            }
        },
    })
}

/// Per-step adjacency for one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpisodeTopology {
    pub steps: Vec<Adjacency>,
}

impl EpisodeTopology {
    /// State-dependent protocols are evaluated at every step; `random_m` is
    /// drawn once and held for the whole episode.
    pub fn build(protocol: &Protocol, layouts: &[AgentLayout], rng: &mut SimRng) -> Result<Self> {
        let steps = match protocol {
            Protocol::RandomM { .. } => {
                let Some(first) = layouts.first() else {
                    return Ok(Self { steps: Vec::new() });
                };
                let adj = build_neighbors(protocol, first, rng)?;
                vec![adj; layouts.len()]
            }
            _ => layouts
                .iter()
                .map(|l| build_neighbors(protocol, l, rng))
                .collect::<Result<_>>()?,
        };
        Ok(Self { steps })
    }

    pub fn constant(adj: Adjacency, horizon: usize) -> Self {
        Self {
            steps: vec![adj; horizon],
        }
    }

    /// Every edge that appears at some step.
    pub fn union(&self, n: usize) -> Adjacency {
        self.steps.iter().fold(Adjacency::empty(n), |acc, a| acc.union(a))
    }

    /// Audit dump: one line per step, `i:j,k;...`.
    pub fn to_text(&self) -> String {
        self.steps
            .iter()
            .enumerate()
            .map(|(t, adj)| {
                let lists: Vec<String> = adj
                    .neighbours
                    .iter()
                    .enumerate()
                    .map(|(i, ns)| {
                        let ns: Vec<String> = ns.iter().map(usize::to_string).collect();
                        format!("{i}:{}", ns.join(","))
                    })
                    .collect();
                format!("{t}\t{}\n", lists.join(";"))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSchedule {
    pub period: u64,
}

impl Default for CommSchedule {
    fn default() -> Self {
        Self { period: 1 }
    }
}

impl CommSchedule {
    pub fn new(period: u64) -> Result<Self> {
        if period == 0 {
            return Err(Error::Config {
                field: "schedule.period".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(Self { period })
    }

    pub fn should_communicate(&self, iteration: u64) -> bool {
        iteration % self.period.max(1) == 0
    }
}
