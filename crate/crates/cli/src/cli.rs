// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "moseg", version, about = "Change-point segmentation of high-dimensional linear regressions")]
pub struct Cli {
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a CSV dataset (first column y, remaining columns covariates).
    Segment(SegmentArgs),
    /// Write a simulated dataset for one of the named settings.
    Simulate(SimulateArgs),
    /// Replicate a simulation setting and tabulate detection accuracy and timings.
    Benchmark(BenchmarkArgs),
    /// Print the cross-validation score grid for one bandwidth.
    CvGrid(CvGridArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input CSV file.
    #[arg(short, long)]
    pub input: PathBuf,

    /// The CSV has no header row; covariates are named x1, x2, ...
    #[arg(long)]
    pub no_header: bool,

    /// Divide each covariate by its full-sample standard deviation first.
    #[arg(long)]
    pub scale_columns: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    Practical,
    Fibonacci,
}

#[derive(Debug, Args)]
pub struct BandwidthArgs {
    /// Comma-separated bandwidths; one value runs single-bandwidth MOSEG.
    #[arg(long, value_delimiter = ',', conflicts_with = "bandwidth_rule")]
    pub bandwidths: Option<Vec<usize>>,

    /// Generate bandwidths from the finest one (default: practical).
    #[arg(long, value_enum)]
    pub bandwidth_rule: Option<RuleArg>,

    /// Finest bandwidth for the rule; defaults to the recommendation for (n, p).
    #[arg(long, requires = "bandwidth_rule")]
    pub g1: Option<usize>,

    /// Number of practical-rule bandwidths.
    #[arg(long, requires = "bandwidth_rule")]
    pub terms: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    /// Grid resolution r in [1/G_min, 1); defaults to 1/G per bandwidth.
    #[arg(short = 'r', long = "resolution")]
    pub resolution: Option<f64>,

    /// Localisation constant; defaults to 0.25 (one bandwidth) or 0.75 (several).
    #[arg(long)]
    pub alpha: Option<f64>,

    /// Fixed Lasso penalty; requires --threshold.
    #[arg(long, conflicts_with = "cv", requires = "threshold")]
    pub lambda: Option<f64>,

    /// Detector threshold D used with --lambda.
    #[arg(long, conflicts_with = "cv", requires = "lambda")]
    pub threshold: Option<f64>,

    /// Choose the penalty and the number of change points by cross validation.
    #[arg(long)]
    pub cv: bool,

    /// Explicit penalty grid for --cv (comma-separated).
    #[arg(long, value_delimiter = ',', requires = "cv")]
    pub lambda_grid: Option<Vec<f64>>,

    /// Fit an unpenalised intercept in every Lasso problem.
    #[arg(long)]
    pub intercept: bool,

    /// Standardise covariates within every Lasso problem.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bandwidths: BandwidthArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,

    /// Write the Stage-1 detector series as CSV (k, T_k, bandwidth).
    #[arg(long)]
    pub emit_detector: Option<PathBuf>,

    /// Output file; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Setting name: S1..S5, E_heavy, E_dep, A1, RT.
    #[arg(long)]
    pub preset: String,

    /// Value of the setting's knob (jump size, sparsity, n, kappa or p).
    #[arg(long)]
    pub knob: Option<f64>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output CSV file.
    #[arg(short, long)]
    pub output: PathBuf,

    /// Also write the generating configuration as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Moseg,
    Ms,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub preset: String,

    /// Knob values to sweep (comma-separated); defaults to the setting's value.
    #[arg(long, value_delimiter = ',')]
    pub knob: Option<Vec<f64>>,

    #[arg(long, default_value_t = 100)]
    pub reps: u64,

    /// Seed of the first replication; replication i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, value_delimiter = ',', default_value = "moseg,ms")]
    pub methods: Vec<MethodArg>,

    /// Bandwidth for single-bandwidth MOSEG; defaults to the finest multiscale bandwidth.
    #[arg(long)]
    pub bandwidth: Option<usize>,

    #[command(flatten)]
    pub bandwidths: BandwidthArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,

    /// Summary table CSV; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,

    /// Per-replication CSV with phase timings and solve counts.
    #[arg(long)]
    pub runs: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvGridArgs {
    #[command(flatten)]
    pub input: InputArgs,

    /// Bandwidth; defaults to the recommendation for (n, p).
    #[arg(long)]
    pub bandwidth: Option<usize>,

    #[arg(short = 'r', long = "resolution")]
    pub resolution: Option<f64>,

    #[arg(long, default_value_t = moseg::pipeline::DEFAULT_ALPHA_SINGLE)]
    pub alpha: f64,

    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,

    #[arg(short, long)]
    pub output: Option<PathBuf>,
}
