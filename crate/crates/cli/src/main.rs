//! `gbtd`: synthetic benchmarks, decompositions, and the classification and
//! clustering pipelines.

mod commands;
mod error;
mod options;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::bench::BenchArgs;
use commands::classify::ClassifyArgs;
use commands::cluster::ClusterArgs;
use commands::decompose::DecomposeArgs;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "gbtd", version, about = "Generalized block-term decompositions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run optimizers on seeded synthetic problems and write their traces.
    SynthBench(BenchArgs),
    /// Fit a model to one tensor container and save it.
    Decompose(DecomposeArgs),
    /// Cross-validated subspace classification.
    Classify(ClassifyArgs),
    /// Hierarchical clustering of contrast features against raw data.
    Cluster(ClusterArgs),
}

/// Caps the worker pool at `GBTD_THREADS` when set.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GBTD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("GBTD_THREADS='{v}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::SynthBench(a) => commands::bench::run(&a),
        Command::Decompose(a) => commands::decompose::run(&a),
        Command::Classify(a) => commands::classify::run(&a),
        Command::Cluster(a) => commands::cluster::run(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
