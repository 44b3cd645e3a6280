//! Command-line front end: dataset generation, training, evaluation and the
//! σ² sweep.
//!
//! Exit codes are a stable contract: 0 success, 2 usage or configuration
//! error, 3 IO or file format error, 4 numeric failure.
//!
//! Dataset directories written by `gen` hold `train.unl`, `test.unl`, the
//! uncoloured test digits as `test-images.idx` / `test-labels.idx` (used for
//! recolouring) and a `manifest.txt`. `UNLEARN_DATA_DIR` is the default for
//! `--out` of `gen` and `--data` of `train` and `eval`.

mod commands;
mod manifest;
mod recipe;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_gen, cmd_reproduce, cmd_train, sweep_table, train_settings, SweepRow, FIG_HEADER,
    RUNS_HEADER,
};
pub use manifest::{sha256_file, RunManifest, BUILD_ID};
pub use recipe::{
    generate, DataSource, GeneratedData, EvalSplit, Recolor, Scale, ScaleRecipe, SWEEP_METHODS,
    SWEEP_SIGMA2,
};

use crate::error::{Error, Result};
use crate::objectives::{Method, Schedule};

pub const DATA_DIR_ENV: &str = "UNLEARN_DATA_DIR";
pub const TRAIN_FILE: &str = "train.unl";
pub const TEST_FILE: &str = "test.unl";
pub const TEST_IMAGES_FILE: &str = "test-images.idx";
pub const TEST_LABELS_FILE: &str = "test-labels.idx";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Parser)]
#[command(name = "unlearn", version, about = "Train digit classifiers on colour-biased data and unlearn the bias")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a biased training split and an unbiased test split.
    Gen(GenArgs),
    /// Train one method and write its parameters and history.
    Train(TrainArgs),
    /// Evaluate trained parameters: accuracy, confusion, recolouring, probe.
    Eval(EvalArgs),
    /// Sweep σ² × methods × seeds and write accuracy tables.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Variance of the colour sampler.
    #[arg(long, default_value_t = 0.02)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `synthetic:<n per class>`, `idx:<dir>` or
    /// `idx:<train images>,<train labels>,<test images>,<test labels>`.
    #[arg(long, default_value = "synthetic:200")]
    pub source: DataSource,
    /// Output directory [default: $UNLEARN_DATA_DIR].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write `preview.ppm` with this many training images.
    #[arg(long, default_value_t = 0)]
    pub preview: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory [default: $UNLEARN_DATA_DIR].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for parameters and reports.
    #[arg(long)]
    pub out: PathBuf,
    /// Plain-text `key=value` settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// baseline | ours | confusion | grl-only | grayscale
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub grl_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// reversal | alternating | alternating-signflip
    #[arg(long)]
    pub schedule: Option<Schedule>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Parameter file written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    /// Dataset directory [default: $UNLEARN_DATA_DIR].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Which split to score.
    #[arg(long, default_value = "test")]
    pub split: EvalSplit,
    /// Recolour the test digits around palette entry `k`, or `all` ten.
    #[arg(long)]
    pub recolor: Option<Recolor>,
    /// Fit a fresh bias head on the frozen features of the split.
    #[arg(long)]
    pub probe: bool,
    /// Convert inputs to grayscale first (for parameters trained with
    /// `--method grayscale`).
    #[arg(long)]
    pub grayscale: bool,
    /// Seed for recolouring and the probe.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReproduceArgs {
    /// desk: 2,000/2,000 synthetic digits; full: 60k/10k MNIST from idx files.
    #[arg(long, default_value = "desk")]
    pub scale: Scale,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Override the scale's epoch count.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the scale's data source.
    #[arg(long)]
    pub source: Option<DataSource>,
}

/// `explicit` or `$UNLEARN_DATA_DIR`.
pub fn data_dir(explicit: Option<&PathBuf>) -> Result<PathBuf> {
    explicit
        .cloned()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::Config(format!("no directory given and {DATA_DIR_ENV} is not set")))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a).map(drop),
        Command::Train(a) => cmd_train(&a).map(drop),
        Command::Eval(a) => cmd_eval(&a).map(drop),
        Command::Reproduce(a) => cmd_reproduce(&a).map(drop),
    }
}
