//! Command-line driver for the GA tradeoff experiments: configuration,
//! pipeline stages and CSV artifacts.

pub mod config;
pub mod manifest;
pub mod output;
pub mod stages;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ga_tradeoff::problems::ProblemKind;

pub use config::{ExperimentConfig, Scale};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage failed: {0}")]
    Stage(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage(_) | CliError::Io(_) => 3,
        }
    }
}

impl From<ga_tradeoff::Error> for CliError {
    fn from(e: ga_tradeoff::Error) -> Self {
        match e {
            ga_tradeoff::Error::Config(m) => CliError::Config(m),
            other => CliError::Stage(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ga-tradeoff", version, about = "Sampling versus GA variability experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory, overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Monte Carlo preset, overrides the config sizes.
    #[arg(long, global = true, value_enum)]
    pub scale: Option<Scale>,
    /// Restrict to these problems.
    #[arg(long, global = true, value_parser = parse_problem)]
    pub problem: Vec<ProblemKind>,
}

fn parse_problem(s: &str) -> Result<ProblemKind, String> {
    s.parse().map_err(|e: ga_tradeoff::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the GA on one simulated dataset and write its traces.
    RunGa {
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
    /// Sampling variance of the reference estimator.
    SamplingVar,
    /// GA variance curves over D datasets and J runs each.
    GaVar,
    /// Convergence-rate fits from stored GA variance curves.
    FitRate,
    /// Optimal sample size at the configured cost point.
    Tradeoff,
    /// Optimal sample size over cost grids, and the timed comparison.
    Sweep,
    /// Per-evaluation timing of each objective.
    Calibrate,
    /// All stages in order.
    Pipeline,
}

/// Resolves the effective configuration: file, then scale preset, then
/// flags.
pub fn resolve_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(scale) = common.scale {
        cfg.apply_scale(scale);
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if !common.problem.is_empty() {
        cfg.problems = common.problem.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(k) = cli.common.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        // A second initialisation in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let cfg = resolve_config(&cli.common)?;
    stages::execute(&cfg, &cli.command)
}
