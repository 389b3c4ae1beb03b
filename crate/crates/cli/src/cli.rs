use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ccpd", version, about = "Coupled CP decomposition with shared and dataset-specific components")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compress, run the multi-start solver and keep the most reproducible run.
    Decompose(DecomposeArgs),
    /// Score a grid of rank/penalty settings by reproducibility.
    Sweep(SweepArgs),
    /// Generate synthetic datasets with known factors.
    Simulate(SimulateArgs),
    /// Group t-tests on subject factors and thresholded spatial maps.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(short = 'o', long = "output")]
    pub output: PathBuf,
    /// Replace artifacts of an earlier invocation in the output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads for the independent starts (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Base seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solve on the uncompressed data.
    #[arg(long)]
    pub no_compress: bool,
    /// Target dimension of the subject and voxel modes.
    #[arg(long)]
    pub compress_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// One CT3 file per dataset.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub solve: SolveArgs,
    #[command(flatten)]
    pub out: OutputArgs,
    /// One CT3 file per dataset.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON description of the synthetic problem.
    #[arg(long)]
    pub config: PathBuf,
    /// Generator seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of `decompose`.
    pub run_dir: PathBuf,
    /// Whitespace-separated group names, one per subject.
    pub labels: PathBuf,
    /// Keep map entries with |z| at or above this value.
    #[arg(long, default_value_t = ccpd::analysis::DEFAULT_Z_THRESHOLD)]
    pub z_thresh: f64,
    /// Pooled-variance t-test instead of Welch.
    #[arg(long)]
    pub pooled: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}
