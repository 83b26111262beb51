//! `liplab`: run approximation pipelines, operator checks, energy-density
//! checks and the invariant suites from a JSON experiment config.
//!
//! Exit codes: 0 when every check passes, 1 when a certificate row or report
//! fails, 2 on a configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Outcome, Sink};
use config::{ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "liplab", version, about = "Smooth cylindrical approximation of Lipschitz functions, with certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (JSON). Without it every section takes its default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print nothing but failures.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run the approximation pipeline and write its certificate.
    Approximate,
    /// Build the partition operator for explicit vectors and/or a random stress run.
    Mapop,
    /// Sobolev energy density for each configured exponent.
    Sobolev,
    /// BV total-variation density and the weak-convergence panel.
    Bv,
    /// Run the invariant suites of every module.
    Verify,
}

fn threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("LIPLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| ConfigError(format!("LIPLAB_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError { code: 1, message: e.to_string() })
}

fn run(cli: &Cli) -> Outcome {
    threads()?;
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let sink = Sink::new(commands::output_dir(&cfg, cli.out.as_deref()), cli.quiet)?;
    sink.write_config(&cfg)?;
    match cli.command {
        Command::Approximate => commands::cmd_approximate(&cfg, &sink),
        Command::Mapop => commands::cmd_mapop(&cfg, &sink),
        Command::Sobolev => commands::cmd_sobolev(&cfg, &sink),
        Command::Bv => commands::cmd_bv(&cfg, &sink),
        Command::Verify => commands::cmd_verify(&cfg, &sink),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
