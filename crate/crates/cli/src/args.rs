//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug, Serialize)]
#[command(
    name = "rlc",
    version,
    about = "Robust sparse log-contrast regression with mean-shift outlier detection",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Fit a model at a fixed λ or at the cross-validated λ.
    Fit(FitArgs),
    /// Robust cross-validation along the λ path.
    Cv(FitArgs),
    /// Robust starting point and adaptive weights.
    Init(InitArgs),
    /// Predict new samples from a fitted model.
    Predict(PredictArgs),
    /// Simulation study over a grid of scenarios.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Cv(_) => "cv",
            Command::Init(_) => "init",
            Command::Predict(_) => "predict",
            Command::Simulate(_) => "simulate",
        }
    }

    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Fit(a) | Command::Cv(a) => &a.common,
            Command::Init(a) => &a.common,
            Command::Predict(a) => &a.common,
            Command::Simulate(a) => &a.common,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CommonArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed of every random choice. Drawn from system entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. Defaults to the available parallelism.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Flat `key=value` file with defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformArg {
    Log,
    Clr,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Sample table with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Sample id column. Row numbers are used when it is absent.
    #[arg(long, default_value = "id")]
    pub id: String,
    /// Non-compositional covariate columns. Every other column is a component.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Group file: one line per group listing component columns.
    /// Defaults to a single group with every component.
    #[arg(long)]
    pub constraint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "log")]
    pub transform: TransformArg,
    /// Replacement for zero components before closure.
    #[arg(long, default_value_t = 0.5)]
    pub pseudo_count: f64,
    /// Do not add an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
pub struct InitParams {
    /// Fraction of the active set dropped by each candidate subsample.
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Leverage quantile of the first active set.
    #[arg(long, default_value_t = 0.9)]
    pub alpha1: f64,
    /// Clean-set cutoff in robust-scale units.
    #[arg(long, default_value_t = 2.0)]
    pub c1: f64,
    /// Exponent of the adaptive weights.
    #[arg(long, default_value_t = 1.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 20)]
    pub init_max_iter: usize,
}

#[derive(Args, Debug, Clone, Copy, Serialize)]
pub struct SolverParams {
    #[arg(long, default_value_t = 1e-6)]
    pub inner_tol: f64,
    #[arg(long, default_value_t = 1000)]
    pub inner_max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub outer_tol: f64,
    #[arg(long, default_value_t = 200)]
    pub outer_max_iter: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PenaltyArg {
    /// Adaptive elastic net.
    #[value(name = "A", alias = "a")]
    A,
    /// Hard ridge.
    #[value(name = "H", alias = "h")]
    H,
    /// Elastic net.
    #[value(name = "E", alias = "e")]
    E,
    /// Constrained lasso without mean shift.
    #[value(name = "NR", alias = "nr")]
    NR,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RuleArg {
    #[value(name = "min")]
    Min,
    #[value(name = "1se")]
    OneSe,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "A")]
    pub penalty: PenaltyArg,
    /// Mixing weight of the ℓ1 (or ℓ0) part.
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,
    /// Fixed λ. Cross-validation is skipped when given.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Cross-validation folds.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, value_enum, default_value = "min")]
    pub rule: RuleArg,
    /// Points on the λ path.
    #[arg(long, default_value_t = 40)]
    pub n_lambda: usize,
    #[command(flatten)]
    pub init: InitParams,
    #[command(flatten)]
    pub solver: SolverParams,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub init: InitParams,
    #[command(flatten)]
    pub solver: SolverParams,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `coefficients.json` written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// New samples with the training column names. The response column is optional.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionArg {
    Shift,
    Swap,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Numbers of components.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub p: Vec<usize>,
    /// Numbers of outliers.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub outliers: Vec<usize>,
    /// Leverage settings, 0 or 1.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub leveraged: Vec<u8>,
    /// Outlier shift in noise-SD units.
    #[arg(long, default_value_t = 8.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 3.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    /// Methods among A, H, E and NR.
    #[arg(long, value_delimiter = ',', default_value = "A,H,E,NR")]
    pub methods: Vec<String>,
    #[arg(long, value_enum, default_value = "shift")]
    pub corruption: CorruptionArg,
    /// Write the simulated data sets instead of fitting them.
    #[arg(long)]
    pub data_only: bool,
    #[command(flatten)]
    pub solver: SolverParams,
}
