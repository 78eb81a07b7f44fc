//! `amc-uq`: run pipeline stages from a config file.
//!
//! Exit codes: 0 success, 1 other failure, 2 config error, 3 missing
//! artifact, 4 numeric divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use amc_uq::experiment::{Experiment, ExperimentConfig, Overrides, Stage};
use amc_uq::nncore::Precision;
use amc_uq::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "amc-uq",
    version,
    about = "Deep-ensemble UQ pipeline for modulation classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_dir` in the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Ensemble members trained concurrently
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Replaces the config's master seed
    #[arg(long, global = true)]
    seed_override: Option<u64>,

    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthesize the dataset and write the train/test split
    Generate,
    /// Train the configured systems
    Train,
    /// Score every system on the clean test set
    Evaluate,
    /// Run the FGSM sweeps
    Attack,
    /// Render figures from stored metrics
    Report,
    /// All stages in order
    Run,
}

#[derive(ValueEnum, Clone, Copy)]
enum PrecisionArg {
    F32,
    F64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact(_) => 3,
        Error::Divergence { .. } => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let config = ExperimentConfig::load(&path)?;
    let overrides = Overrides {
        out: cli.out,
        workers: cli.workers,
        seed: cli.seed_override,
        precision: cli.precision.map(|p| match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }),
    };
    let stage = match cli.command {
        Command::Generate => Stage::Generate,
        Command::Train => Stage::Train,
        Command::Evaluate => Stage::Evaluate,
        Command::Attack => Stage::Attack,
        Command::Report => Stage::Report,
        Command::Run => Stage::Run,
    };
    let exp = Experiment::new(config, overrides)?;
    let manifest = exp.run(stage)?;
    eprintln!(
        "{}: {} artifact(s) in {} ({:.1}s)",
        manifest.stage,
        manifest.artifacts.len(),
        exp.out_dir().display(),
        manifest.elapsed_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
