//! `bvrm`: synthetic data, training, reconstruction and evaluation for
//! generator-based visual reconstruction from voxel responses.
//!
//! Exit status: 0 success, 2 bad config or flags, 3 missing or corrupt
//! input files, 4 gradient check failure, 1 anything else.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use bvrm_core::reconstructor::SearchMode;
use clap::{Args, Parser, Subcommand};

use crate::commands::GradcheckFailed;
use crate::config::{ConfigError, Overrides, RunConfig};

/// Written on exit with every file path read, one per line.
const ACCESS_LOG_ENV: &str = "BVRM_ACCESS_LOG";

#[derive(Parser, Debug)]
#[command(name = "bvrm", version, about = "Reconstruct viewed images from voxel responses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a dataset and its hidden ground truth
    Datagen(Common),
    /// Train the coarse-category decoder
    TrainDecoder(Common),
    /// Train the V1-V3 encoding model
    TrainEncoder(Common),
    /// Search for the images behind the test voxels
    Reconstruct(SearchArgs),
    /// Score reconstructions against the true stimuli
    Evaluate(Common),
    /// Generator search against a fixed finite library at equal budget
    CompareLibrary(SearchArgs),
    /// Run every central-difference gradient check
    Gradcheck(Common),
    /// Print the resolved configuration
    ShowConfig(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file; its keys override the preset
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Search threads (results do not depend on it)
    #[arg(long)]
    workers: Option<usize>,
    /// predicted | random | fixed:<label> | library
    #[arg(long)]
    mode: Option<SearchMode>,
    /// Reconstructions kept per target
    #[arg(long)]
    topk: Option<usize>,
    /// Start from the full experiment sizes instead of desk scale
    #[arg(long)]
    paper_scale: bool,
    /// Dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decoder model file
    #[arg(long)]
    decoder: Option<PathBuf>,
    /// Encoder model file
    #[arg(long)]
    encoder: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated test ids; all test samples when omitted
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let flags = Overrides {
            seed: self.seed,
            workers: self.workers,
            mode: self.mode,
            top_k: self.topk,
            dataset: self.data.clone(),
            output: self.out.clone(),
            decoder: self.decoder.clone(),
            encoder: self.encoder.clone(),
        };
        RunConfig::resolve(self.paper_scale, self.config.as_deref(), &flags)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use commands::*;
    match cli.command {
        Command::Datagen(c) => datagen(&c.resolve()?),
        Command::TrainDecoder(c) => train_decoder(&c.resolve()?),
        Command::TrainEncoder(c) => train_encoder_cmd(&c.resolve()?),
        Command::Reconstruct(a) => reconstruct(&a.common.resolve()?, &a.targets),
        Command::Evaluate(c) => evaluate(&c.resolve()?),
        Command::CompareLibrary(a) => compare_library(&a.common.resolve()?, &a.targets),
        Command::Gradcheck(c) => gradcheck(&c.resolve()?),
        Command::ShowConfig(c) => show_config(&c.resolve()?),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<GradcheckFailed>().is_some() {
        return 4;
    }
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<bvrm_core::Error>() {
            if e.is_input_error() {
                return 3;
            }
            if matches!(e, bvrm_core::Error::InvalidArgument(_)) {
                return 2;
            }
        }
    }
    1
}

fn write_access_log() {
    let Some(path) = std::env::var_os(ACCESS_LOG_ENV) else { return };
    let lines: String = bvrm_core::fsio::reads()
        .iter()
        .map(|p| format!("{}\n", p.display()))
        .collect();
    if let Err(e) = std::fs::write(&path, lines) {
        eprintln!("warning: cannot write access log {}: {e}", PathBuf::from(path).display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli);
    write_access_log();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
