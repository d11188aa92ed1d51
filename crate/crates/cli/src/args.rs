use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "factmle", version, about = "Maximum-likelihood factor analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a factor model of a given rank.
    Fit(FitArgs),
    /// Fit a sequence of ranks with warm starts and print a CSV table.
    Path(PathArgs),
    /// Compare solvers on replicated data by time to reach a tolerance.
    Benchmark(BenchArgs),
    /// Draw a synthetic factor-model dataset.
    Simulate(SimArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    /// Rows are observations; columns are centered on load.
    Data,
    /// A symmetric covariance matrix.
    Cov,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopKind {
    Objective,
    Iterate,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumKind {
    Auto,
    Dense,
    Gram,
    Iterative,
}

#[derive(Args, Debug, Clone)]
pub struct InputArgs {
    /// CSV file, comma separated.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "data")]
    pub input_kind: InputKind,
    /// The first row of the CSV is a header.
    #[arg(long)]
    pub header: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SolveArgs {
    /// Lower bound on each uniqueness.
    #[arg(long, default_value_t = 1e-7)]
    pub eps: f64,
    /// Relative tolerance of the stopping rule.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    /// half | ones | random | random:SEED | warm:MODEL.json
    #[arg(long, default_value = "half")]
    pub init: String,
    /// Seed for random initialisation and the iterative eigensolver.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "objective")]
    pub stop: StopKind,
    #[arg(long, value_enum, default_value = "auto")]
    pub spectrum: SpectrumKind,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub rank: usize,
    #[command(flatten)]
    pub solve: SolveArgs,
    /// Penalise with γ Σ φᵢ² instead of the box.
    #[arg(long, conflicts_with_all = ["continuation", "blocks"])]
    pub ridge: Option<f64>,
    /// Solve along a decreasing ε schedule, pinning boundary coordinates.
    #[arg(long, conflicts_with = "blocks")]
    pub continuation: bool,
    /// ε schedule for --continuation, e.g. 1e-2,1e-4,1e-6.
    #[arg(long, value_delimiter = ',', requires = "continuation")]
    pub eps_schedule: Option<Vec<f64>>,
    /// Block sizes of a block-diagonal precision, e.g. 3,3,2.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<usize>>,
    /// Include the per-iteration objective values.
    #[arg(long)]
    pub trace: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PathArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Ranks as a list (1,2,4) or an inclusive range (1..8).
    #[arg(long)]
    pub ranks: String,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 550)]
    pub n: usize,
    #[arg(long, default_value_t = 8)]
    pub r0: usize,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub loading_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub loading_var: f64,
    #[arg(long, default_value_t = 10.0)]
    pub uniqueness_mean: f64,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Benchmark on this file instead of synthetic data.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "data")]
    pub input_kind: InputKind,
    #[arg(long)]
    pub header: bool,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    /// Ranks of the path, as for `path`.
    #[arg(long, default_value = "1..8")]
    pub ranks: String,
    #[arg(long, default_value_t = 2)]
    pub replicates: usize,
    /// Any of factmle, factmle-warm, em.
    #[arg(long, value_delimiter = ',', default_value = "factmle,em")]
    pub methods: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4,1e-5")]
    pub tol_levels: Vec<f64>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub eps: f64,
    /// Base seed; replicate k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimArgs {
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the n × p data matrix.
    #[arg(long)]
    pub out_data: PathBuf,
    /// Where to write the generating Ψ⁰ and L⁰.
    #[arg(long)]
    pub out_truth: PathBuf,
}
