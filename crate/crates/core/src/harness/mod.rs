//! Seeded training runs, metric logging and batch execution.

pub mod config;
pub mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::Serialize;

pub use config::{apply_override, parse_seed_range, ExperimentConfig, HyperConfig, NetworkConfig};
pub use metrics::{
    classify_joint_step, joint_rates, mse_discrepancy, read_csv, suggestion_proportion, write_csv, JointLabel,
    JointRates, MetricRow, CSV_COLUMNS,
};

use crate::envs::{Env, EnvKind};
use crate::error::{Error, Result};
use crate::learner::{build_learner, Algorithm, Learner, UpdateContext, UpdateStats};
use crate::mmdp::{agent_returns, normalized_collective_return, rollout, Environment, SimRng, TrajectoryBatch};
use crate::topology::EpisodeTopology;

/// RNG streams derived from a run seed, one per purpose, so that adding
/// draws in one place never shifts another.
const STREAM_INIT: u64 = 0;
const STREAM_EPISODES: u64 = 1;
const STREAM_TOPOLOGY: u64 = 2;

fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One seed's training state.
pub struct Trainer {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub env: Env,
    pub learner: Box<dyn Learner>,
    episode_rng: SimRng,
    topology_rng: SimRng,
    episode: usize,
}

/// What one episode produced, for callers that want more than the metrics.
pub struct EpisodeReport {
    pub row: MetricRow,
    pub batch: TrajectoryBatch,
    pub topology: EpisodeTopology,
    pub stats: UpdateStats,
}

impl Trainer {
    pub fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = config.env.build()?;
        let spec = config.learner_spec(env.observation_dim(), env.action_counts(), env.input_scale());
        let learner = build_learner(&spec, &mut stream(seed, STREAM_INIT))?;
        Ok(Self {
            config,
            seed,
            env,
            learner,
            episode_rng: stream(seed, STREAM_EPISODES),
            topology_rng: stream(seed, STREAM_TOPOLOGY),
            episode: 0,
        })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Rollout, neighbourhoods, update, metrics.
    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let rollout_seed: u64 = self.episode_rng.random();
        let horizon = self.env.horizon();
        let batch = rollout(&mut self.env, self.learner.as_ref(), horizon, rollout_seed)?;
        let layouts: Vec<_> = batch.states().map(|s| self.env.layout(s)).collect();
        let topology = EpisodeTopology::build(&self.config.topology, &layouts, &mut self.topology_rng)?;
        let ctx = UpdateContext {
            topology: &topology,
            schedule: self.config.schedule,
            episode: self.episode as u64,
        };
        let stats = self.learner.update(&batch, &ctx)?;
        let row = self.metrics(&batch)?;
        if !row.is_finite() {
            return Err(Error::NonFinite {
                context: "episode metrics",
                detail: format!("seed {} episode {}", self.seed, self.episode),
            });
        }
        self.episode += 1;
        Ok(EpisodeReport {
            row,
            batch,
            topology,
            stats,
        })
    }

    fn metrics(&self, batch: &TrajectoryBatch) -> Result<MetricRow> {
        let two_agent_predation = self.env.kind() == EnvKind::Predation && batch.n_agents == 2;
        let rates = if two_agent_predation {
            let steps: Vec<_> = batch.steps.iter().map(|s| (&s.state, &s.actions)).collect();
            Some(joint_rates(EnvKind::Predation, &steps)?)
        } else {
            None
        };
        let (proportion, mse) = match (two_agent_predation, self.learner.suggesting_set()) {
            (true, Some(set)) => {
                let states: Vec<_> = batch.states().collect();
                (
                    Some(suggestion_proportion(set, &states)?),
                    Some(mse_discrepancy(set, &states)?),
                )
            }
            _ => (None, None),
        };
        Ok(MetricRow {
            seed: self.seed,
            episode: self.episode,
            normalized_return: normalized_collective_return(batch),
            agent_returns: agent_returns(batch),
            rates,
            suggestion_proportion: proportion,
            mse_discrepancy: mse,
        })
    }
}

/// Trains one seed for `config.episodes` episodes and returns its rows.
pub fn train_seed(config: &ExperimentConfig, seed: u64) -> Result<Vec<MetricRow>> {
    let mut trainer = Trainer::new(config.clone(), seed)?;
    (0..config.episodes)
        .map(|_| trainer.run_episode().map(|r| r.row))
        .collect()
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub seed_seconds: Vec<(u64, f64)>,
    pub files: Vec<PathBuf>,
}

/// Runs every seed of `config` with at most `jobs` in parallel, writing
/// `seed_<n>.csv` per seed and `manifest.json` into `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let results: Vec<Result<(PathBuf, f64)>> = pool.install(|| {
        use rayon::prelude::*;
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let t0 = Instant::now();
                let rows = train_seed(config, seed)?;
                let path = metrics_path(&config.out_dir, seed);
                write_csv(fs::File::create(&path)?, &rows)?;
                Ok((path, t0.elapsed().as_secs_f64()))
            })
            .collect()
    });
    let mut files = Vec::new();
    let mut seed_seconds = Vec::new();
    for (seed, r) in config.seeds.iter().zip(results) {
        let (path, secs) = r.map_err(|e| Error::InvalidInput(format!("seed {seed}: {e}")))?;
        files.push(path);
        seed_seconds.push((*seed, secs));
    }
    let manifest = Manifest {
        config: config.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        seed_seconds,
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(config.out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Every supported algorithm on one environment, each into `out_dir/<algo>`.
pub fn run_grid(base: &ExperimentConfig, jobs: usize) -> Result<Vec<(Algorithm, Manifest)>> {
    Algorithm::ALL
        .into_iter()
        .filter(|a| a.supports(base.env.kind))
        .map(|algorithm| {
            let mut c = base.clone();
            c.algorithm = algorithm;
            c.out_dir = base.out_dir.join(algorithm.as_str());
            run_experiment(&c, jobs).map(|m| (algorithm, m))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: EnvKind, algorithm: Algorithm) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(kind);
        c.algorithm = algorithm;
        c.episodes = 3;
        c.seeds = vec![1, 2];
        c.networks.actor_hidden = vec![8];
        c.networks.critic_hidden = vec![8];
        c.env.predation.n_agents = 2;
        c.env.cleanup.horizon = 10;
        c.env.harvest.horizon = 10;
        c.env.navigation.horizon = 10;
        c
    }

    #[test]
    fn same_seed_same_rows() {
        let c = tiny(EnvKind::Predation, Algorithm::Ss);
        let a = train_seed(&c, 5).unwrap();
        let b = train_seed(&c, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, train_seed(&c, 6).unwrap());
        let r = a[0].rates.unwrap();
        assert!((r.cc + r.cd + r.dd - 1.0).abs() < 1e-9);
        assert_eq!(a[0].suggestion_proportion.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn experiment_writes_one_file_per_seed_and_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(EnvKind::Navigation, Algorithm::Vps);
        c.out_dir = dir.path().to_path_buf();
        let m = run_experiment(&c, 2).unwrap();
        assert_eq!(m.files.len(), 2);
        let first = fs::read(metrics_path(dir.path(), 1)).unwrap();
        let rows = read_csv(first.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.rates.is_none()));
        assert!(dir.path().join("manifest.json").exists());
        run_experiment(&c, 1).unwrap();
        assert_eq!(fs::read(metrics_path(dir.path(), 1)).unwrap(), first);
    }

    #[test]
    fn period_two_schedule_skips_odd_episodes() {
        let mut c = tiny(EnvKind::Predation, Algorithm::Ss);
        c.schedule.period = 2;
        c.topology = crate::topology::Protocol::Full;
        let mut t = Trainer::new(c, 0).unwrap();
        let shares: Vec<usize> = (0..4).map(|_| t.run_episode().unwrap().stats.shares).collect();
        assert_eq!(shares, vec![4, 0, 4, 0]);
    }
}
