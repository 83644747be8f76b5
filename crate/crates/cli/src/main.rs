use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ncf_cli::commands::{bench, moments, reconstruct, synth};
use ncf_cli::config::{Overrides, RunConfig};
use ncf_cli::error::Result;

#[derive(Parser)]
#[command(name = "ncf", version, about = "Reconstruct correlated fields and their power spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Outer iterations.
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// A constant number of samples per iteration.
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Draw a signal from the true spectrum and simulate data.
    Synth,
    /// Infer signal and spectrum from a data file.
    Reconstruct,
    /// Compare KL convergence of the reformulated and legacy loops.
    Bench,
    /// Recompute posterior moments and plots from a reconstruction.
    Moments,
}

fn run(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ncf_cli::error::CliError::config("--config is required"))?;
    let cfg = RunConfig::load(path)?.finish(&Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        iterations: cli.iterations,
        samples: cli.samples,
    })?;
    match cli.command {
        Command::Synth => synth::run(&cfg),
        Command::Reconstruct => reconstruct::run(&cfg),
        Command::Bench => bench::run(&cfg),
        Command::Moments => moments::run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
