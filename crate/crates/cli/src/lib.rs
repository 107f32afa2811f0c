//! `mismatch` experiment runner: deterministic, file-based reproductions of
//! the matched-solution, calibration, precision and noise experiments.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mismatch_core::Precision;

use crate::commands::Ctx;
use crate::config::Config;
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "mismatch", version, about = "Measurement-matrix construction experiments")]
pub struct Cli {
    /// TOML experiment configuration. Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides system.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides system.precision.
    #[arg(long, global = true, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Overrides outputs.directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Suppress the console summary.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write the pre-measurement matrix and the hidden matrix as MMRX files.
    Gen,
    /// Matched solution for one target (solver.kind algo1 or algo2).
    Matched,
    /// One calibration, then reconstruction of every target.
    Calibrate,
    /// λ-vector and reconstruction verdicts for all solvers in both precisions.
    PrecisionStudy,
    /// Final match error and reconstruction quality across noise levels.
    NoiseSweep,
    /// The (1 - x)·x^i curve family.
    Curves,
    /// Stationary statistics of the noisy error recurrence.
    NoiseLimit,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse()
}

/// Loads the configuration and applies the command-line overrides.
pub fn resolve(cli: &Cli) -> CliResult<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.system.seed = seed;
    }
    if let Some(p) = cli.precision {
        cfg.system.precision = p.as_str().to_string();
    }
    let out = commands::output_dir(cli.out.as_deref(), &cfg);
    cfg.outputs.directory = out.to_string_lossy().into_owned();
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = resolve(cli)?;
    let ctx = Ctx {
        out: PathBuf::from(&cfg.outputs.directory),
        cfg,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Gen => commands::cmd_gen(&ctx),
        Command::Matched => commands::cmd_matched(&ctx),
        Command::Calibrate => commands::cmd_calibrate(&ctx),
        Command::PrecisionStudy => commands::cmd_precision_study(&ctx),
        Command::NoiseSweep => commands::cmd_noise_sweep(&ctx),
        Command::Curves => commands::cmd_curves(&ctx),
        Command::NoiseLimit => commands::cmd_noise_limit(&ctx),
    }
}

/// Runs and maps the outcome to a process exit code.
pub fn main_exit_code(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
