//! Batch front end for the weighted-least-squares estimation, Monte Carlo
//! simulation, and periodogram workflows. Configs are JSON, outputs are CSV,
//! and every run is deterministic under a fixed seed.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hetwls",
    version,
    about = "Weighted least squares for misspecified models: fit, simulate, and search periods"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a regression dataset with a configured weighting strategy.
    Fit(CommonArgs),
    /// Run a Monte Carlo coverage study.
    Simulate(CommonArgs),
    /// Scan a frequency grid for one light curve.
    Periodogram(CommonArgs),
    /// Score period recovery over a catalog.
    Score(CommonArgs),
}

#[derive(Args)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,

    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,

    /// Override the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads; 0 = all cores. Falls back to HETWLS_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,

    /// Increase verbosity (-v, -vv).
    #[arg(short, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

/// Command errors with their process exit codes: 2 for config/parse problems,
/// 3 for singular systems, 1 for I/O.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Computation(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Computation(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Computation(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

fn configure_threads(args: &CommonArgs) {
    let requested = args.threads.or_else(|| {
        std::env::var("HETWLS_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = requested {
        if t > 0 {
            // A second call (e.g. in tests) fails harmlessly.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global();
        }
    }
}

type CommandFn = fn(&CommonArgs) -> Result<(), CliError>;

fn main() {
    let cli = Cli::parse();
    let (args, run): (&CommonArgs, CommandFn) = match &cli.command {
        Command::Fit(a) => (a, commands::run_fit),
        Command::Simulate(a) => (a, commands::run_simulate),
        Command::Periodogram(a) => (a, commands::run_periodogram),
        Command::Score(a) => (a, commands::run_score),
    };
    configure_threads(args);
    if let Err(e) = run(args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
