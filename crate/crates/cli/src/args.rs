use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "hsic",
    version,
    about = "Kernel independence tests and power experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test independence of the rows of two CSV files.
    Test(TestArgs),
    /// Monte Carlo power over a grid of sample sizes.
    Power(SweepArgs),
    /// Power and mean test time per sample size, trials run sequentially.
    Bench(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NullArg {
    Spectral,
    Permutation,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceArg {
    Permute,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Timings {
    /// Write measured wall-clock seconds.
    Record,
    /// Leave timing fields empty so reruns are byte-identical.
    Omit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LandmarkArg {
    /// Subsample landmarks from the data rows.
    Data,
    /// Draw landmarks from the generator's marginal distributions.
    Generator,
}

/// Options shared by every command. Method-specific flags are rejected when
/// no selected method uses them.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// gaussian, linear, polynomial[:degree] or brownian[:hurst].
    #[arg(long)]
    pub kernel_x: Option<String>,
    #[arg(long)]
    pub kernel_y: Option<String>,
    /// Gaussian bandwidth: "median" or a positive number.
    #[arg(long)]
    pub bandwidth_x: Option<String>,
    #[arg(long)]
    pub bandwidth_y: Option<String>,
    /// Largest number of rows used by the median heuristic.
    #[arg(long, default_value_t = 1000)]
    pub median_cap: usize,
    /// Block size B (block method).
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Block size B = floor(m^gamma) (block method).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub variance: Option<VarianceArg>,
    /// Number of Nystrom landmarks.
    #[arg(long)]
    pub landmarks: Option<usize>,
    /// Nystrom ridge; defaults to 1e-8 * trace / n.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Number of random Fourier features D (even).
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub null: Option<NullArg>,
    /// Spectral null draws.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Timings::Record)]
    pub timings: Timings,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    /// CSV file with one observation of X per row.
    #[arg(long)]
    pub x: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    /// hsic-spectral, hsic-permutation, block, nystrom, rff or dcor.
    #[arg(long, default_value = "hsic-spectral")]
    pub method: String,
    #[command(flatten)]
    pub opts: MethodArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Comma-separated list of methods.
    #[arg(long, value_delimiter = ',', required = true)]
    pub method: Vec<String>,
    /// linear, sine, large-scale or null.
    #[arg(long)]
    pub generator: String,
    /// Dimension of X.
    #[arg(long)]
    pub dim: usize,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub m_grid: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, value_enum)]
    pub landmark_source: Option<LandmarkArg>,
    #[command(flatten)]
    pub opts: MethodArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}
