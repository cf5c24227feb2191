//! Command-line front end for the nested MLMC engine: per-level statistics,
//! tolerance sweeps, the nested Monte Carlo baseline and oracle self-checks,
//! all written as CSV.

pub mod commands;
pub mod config;
pub mod parse;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{execute, LevelRow, PropertyReport, SweepRow};
pub use config::{Experiment, LevelRange, Mode, Overrides, RunConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<nested_mlmc::Error> for CliError {
    fn from(e: nested_mlmc::Error) -> Self {
        match e {
            nested_mlmc::Error::Config(_) | nested_mlmc::Error::Capability(_) => CliError::Config(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nested-mlmc", version, about = "Nested multilevel Monte Carlo experiments")]
pub struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for sampling (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-level mean, variance, kurtosis and cost of the multilevel corrections
    LevelStats(Overrides),
    /// Adaptive MLMC runs over a tolerance list
    MlmcSweep(Overrides),
    /// Telescoping, decay and allocation checks against the exact discrete oracle
    OracleCheck(Overrides),
    /// Nested Monte Carlo without inner multilevel corrections, over a tolerance list
    Baseline(Overrides),
}

impl Command {
    pub fn mode(&self) -> Mode {
        match self {
            Command::LevelStats(_) => Mode::LevelStats,
            Command::MlmcSweep(_) => Mode::MlmcSweep,
            Command::OracleCheck(_) => Mode::OracleCheck,
            Command::Baseline(_) => Mode::Baseline,
        }
    }

    pub fn overrides(&self) -> &Overrides {
        match self {
            Command::LevelStats(o) | Command::MlmcSweep(o) | Command::OracleCheck(o) | Command::Baseline(o) => o,
        }
    }
}

/// Merges the config file (if any) with the flags and validates the result.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let cfg: RunConfig =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            cfg
        }
        None => RunConfig::default(),
    };
    cli.command.overrides().apply(&mut cfg)?;
    cfg.mode = Some(cli.command.mode());
    cfg.validate()?;
    Ok(cfg)
}
