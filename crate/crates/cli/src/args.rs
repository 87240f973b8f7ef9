use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use spdcp::detection::Method;
use spdcp::model::ScenarioId;

#[derive(Debug, Parser)]
#[command(name = "spdcp", version, about = "Change-point detection for SPD matrix sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a sequence from one of the simulation scenarios.
    Simulate(SimulateArgs),
    /// Detect change points in a sequence file.
    Detect(DetectArgs),
    /// Monte Carlo tables over scenarios and methods.
    Bench(BenchArgs),
    /// Sliding-window covariances of a time series, optionally followed by detection.
    Covseq(CovseqArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Shared {
    /// RNG seed (generation, CV folds or Monte Carlo master seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with defaults for any flag (keys use snake_case flag names).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DetectFlags {
    /// Scan bandwidth.
    #[arg(long)]
    pub h: Option<usize>,
    /// Number of cross-validation folds.
    #[arg(long = "k-folds")]
    pub k_folds: Option<usize>,
    /// Largest number of change points tried by cross-validation.
    #[arg(long = "k-max")]
    pub k_max: Option<usize>,
    /// Fixed threshold on the squared scan norm instead of cross-validation.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Embedding: proposed, vector or symmetric.
    #[arg(long)]
    pub method: Option<Method>,
    /// Take the matrix log before the vector/symmetric embeddings.
    #[arg(long = "log-baselines")]
    pub log_baselines: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub shared: Shared,
    /// J2 or J4.
    #[arg(long)]
    pub scenario: Option<ScenarioId>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Noise scale of the tangent coefficients.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub detect: DetectFlags,
    /// Sequence CSV (`# spdseq m=.. n=..`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Ridge-regularize matrices that fail SPD validation instead of failing.
    #[arg(long)]
    pub regularize: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub detect: DetectFlags,
    /// Designs as SCENARIO:N:M, comma separated (default: the m = 6 table).
    #[arg(long, value_delimiter = ',')]
    pub designs: Option<Vec<String>>,
    /// Methods to compare, comma separated (default: all three).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Monte Carlo replications per cell.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Worker threads for replications.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CovseqArgs {
    #[command(flatten)]
    pub shared: Shared,
    #[command(flatten)]
    pub detect: DetectFlags,
    /// Time series CSV (`# timeseries m=.. T=..`).
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Use the built-in 274 x 8 block-design series instead of a file.
    #[arg(long)]
    pub synthetic: bool,
    /// Window length.
    #[arg(long)]
    pub window: Option<usize>,
    /// Run change-point detection on the covariance sequence.
    #[arg(long = "detect")]
    pub run_detection: bool,
}
