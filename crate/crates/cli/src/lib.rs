//! Command-line driver: synthesize scenes, pre-train, classify, ablate and
//! evaluate, with every setting taken from one JSON run config.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hsissl_core::ErrorClass;
use thiserror::Error;

pub use config::{apply_override, load_config, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hsissl_core::Error),

    #[error("configuration error: {0}")]
    Config(String),
}

impl CliError {
    /// 2 configuration, 3 data format, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hsissl", version, about = "Hyperspectral Barlow-Twins pre-training and few-shot evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and label map.
    Synth(RunArgs),
    /// Barlow-Twins pre-training; writes encoder.ckpt and pretrain_loss.csv.
    Pretrain(RunArgs),
    /// Few-shot classification over the shots x seeds x protocols grid.
    Classify(RunArgs),
    /// Augmentation-pair ablation matrix.
    Ablate(RunArgs),
    /// Score a classifier checkpoint and export a prediction map.
    Eval(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run config; defaults are used for anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set pretrain.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

type Handler = fn(&RunConfig, &Path) -> Result<(), CliError>;

pub fn run(cli: Cli) -> Result<(), CliError> {
    // (args, handler, reads scene, reads labels, reads checkpoint)
    let (args, cmd, inputs): (&RunArgs, Handler, (bool, bool, bool)) = match &cli.command {
        Command::Synth(a) => (a, commands::synth, (false, false, false)),
        Command::Pretrain(a) => (a, commands::pretrain_cmd, (true, false, false)),
        Command::Classify(a) => (a, commands::classify, (true, true, true)),
        Command::Ablate(a) => (a, commands::ablate, (true, true, false)),
        Command::Eval(a) => (a, commands::eval, (true, true, true)),
    };
    let cfg = load_config(args.config.as_deref(), &args.set)?;
    cfg.validate()?;
    cfg.check_inputs(inputs.0, inputs.1, inputs.2)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Core(hsissl_core::Error::io(&args.out, e)))?;
    cmd(&cfg, &args.out)
}
