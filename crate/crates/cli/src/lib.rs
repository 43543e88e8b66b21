//! Config-driven experiment pipeline for the `safecert` binary.
//!
//! Exit codes: 0 on success, 1 on runtime or numeric failure, 2 on usage
//! or config errors.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{Context, RunOptions};
pub use config::{Config, LoadedConfig, Method};

/// Usage or configuration problem; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "safecert", version, about = "Data-driven safety certificates for stochastic systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, default_value = "safecert.toml")]
    pub config: PathBuf,
    /// Restrict certify/calibrate/evaluate to one method.
    #[arg(long, global = true, value_enum)]
    pub method: Option<Method>,
    /// Added to every configured seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed_offset: u64,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent cells.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate training, pair and calibration datasets.
    GenData,
    /// Monte-Carlo ground truth on the evaluation grid.
    McOracle,
    /// Fit estimators and write prediction grids.
    Certify,
    /// Histogram-binning certified lower bounds.
    Calibrate,
    /// Metrics against the Monte-Carlo grid.
    Evaluate,
    /// All of the above in order.
    Sweep,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    let cfg = LoadedConfig::from_path(&cli.config)?;
    let opts = RunOptions { out: cli.out.clone(), seed_offset: cli.seed_offset, method: cli.method, threads: cli.threads };
    let ctx = Context::new(cfg, &opts)?;
    ctx.run(cli.command)
}
