use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssmarl::envs::EnvKind;
use ssmarl::harness::{parse_seed_range, run_experiment, run_grid, ExperimentConfig};
use ssmarl::theory::run_sweep;
use ssmarl::Error;

#[derive(Parser)]
#[command(name = "ssmarl", version, about = "Suggestion-sharing MARL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one algorithm on one environment for every seed.
    Train(RunArgs),
    /// Check the return-improvement bounds on random tabular games.
    Verify(VerifyArgs),
    /// Train every supported algorithm on one environment.
    Bench(RunArgs),
    /// Print the resolved configuration as TOML.
    DumpConfig(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; only `env.kind` is required, the rest defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment defaults to start from when no config file is given.
    #[arg(long, default_value = "predation")]
    env: EnvKind,
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range `N..M` (exclusive) or `N..=M`.
    #[arg(long)]
    seeds: Option<String>,
    /// Maximum seeds trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key.path=value`, applied over the config; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1000)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn resolve(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path, &args.overrides)?,
        None => ExperimentConfig::from_overrides(args.env, &args.overrides)?,
    };
    if let Some(seed) = args.seed {
        config.seeds = vec![seed];
    }
    if let Some(range) = &args.seeds {
        config.seeds = parse_seed_range(range)?;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Train(args) => {
            let config = resolve(&args)?;
            let manifest = run_experiment(&config, args.jobs)?;
            println!("{}", to_json(&manifest)?);
        }
        Command::Bench(args) => {
            let config = resolve(&args)?;
            for (algorithm, manifest) in run_grid(&config, args.jobs)? {
                eprintln!("{algorithm}: {:.1}s", manifest.wall_clock_seconds);
            }
        }
        Command::DumpConfig(args) => {
            print!("{}", resolve(&args)?.to_toml_string()?);
        }
        Command::Verify(args) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(args.jobs.max(1))
                .build()
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            let report = pool.install(|| run_sweep(args.instances, args.seed))?;
            for c in &report.checks {
                eprintln!(
                    "{:<18} {:>5} evaluated  {:>3} violations  worst {:+.3e}",
                    c.name, c.evaluated, c.violations, c.worst
                );
            }
            let json = to_json(&report)?;
            match &args.out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
