use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stcl::cli::{run_command, CliError, Command, ExperimentConfig};

/// Spectral temporal contrastive learning experiments on Markov chains.
#[derive(Debug, Parser)]
#[command(name = "stcl", version)]
struct Args {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Replaces every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Cmd {
    /// Eigendecomposition of the normalized state graph.
    Spectrum,
    /// Train an encoder with the contrastive loss.
    Train,
    /// Fit linear probes on embeddings.
    Probe,
    /// Sampled vs exact loss across sample budgets.
    CompareLosses,
    /// spectrum, train and probe in one run.
    Experiment,
}

fn run(args: &Args) -> Result<(), CliError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = args.seed {
        config.override_seed(seed);
    }
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("stcl-out"));
    let command = match args.command {
        Cmd::Spectrum => Command::Spectrum,
        Cmd::Train => Command::Train,
        Cmd::Probe => Command::Probe,
        Cmd::CompareLosses => Command::CompareLosses,
        Cmd::Experiment => Command::Experiment,
    };
    run_command(command, config, &out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
