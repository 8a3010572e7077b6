//! `ecozoo` command-line front end.
//!
//! Exit codes: 0 on success, 1 on domain errors, 2 on usage errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ecozoo", version, about = "Contextual eco-driving simulation suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Configuration file for the subcommand.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Progress messages on stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample contexts from a feature distribution into a dataset file.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Number of contexts to draw.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Exhaustive fixed-time plan search for every context of a dataset.
    SignalOpt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Run one episode, optionally exporting the per-step trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Write trace.csv with one row per vehicle per step.
        #[arg(long)]
        trace: bool,
    },
    /// Fit per-class IDM posteriors from trajectories.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
    },
    /// Run an evaluation campaign against the human baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Overrides the campaign seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Histogram bin width in percentage points.
        #[arg(long)]
        bins: Option<f64>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Domain(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Domain(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate { common, seed, count } => commands::generate(&common, seed, count),
        Command::SignalOpt { common, seed } => commands::signal_opt(&common, seed),
        Command::Simulate { common, seed, trace } => commands::simulate(&common, seed, trace),
        Command::Calibrate { common, seed } => commands::calibrate(&common, seed),
        Command::Evaluate { common, seed, bins } => commands::evaluate(&common, seed, bins),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nUsage: ecozoo <COMMAND> --config <CONFIG> --out <OUT> [OPTIONS]\nRun `ecozoo --help` for details.");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
