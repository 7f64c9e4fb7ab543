use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "proxy-anchor", version, about = "Anchor regression with noisy proxies for the anchor")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Format of records printed to stdout and of experiment result files.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// More diagnostics on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Worker threads for experiment replicates.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a sample from a structural model and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit a predictor from a CSV dataset.
    Fit(FitArgs),
    /// Mean squared prediction error of a saved predictor.
    Evaluate(EvaluateArgs),
    /// Analytic worst-case loss of a predictor over a robustness set.
    WorstCase(WorstCaseArgs),
    /// Scan the one-dimensional family of models sharing an observed covariance.
    Identify(IdentifyArgs),
    /// Run a replicated experiment and write its result table.
    Experiment(ExperimentArgs),
    /// Leave-one-group-out choice of lambda.
    Cv(CvArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model: built-in bundle (e1, e2, e3, e4) or JSON file.
    #[arg(long)]
    pub scm: String,
    /// Replace the model's proxies by isotropic W, Z with this signal-to-variance ratio.
    #[arg(long)]
    pub svr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of rows.
    #[arg(long)]
    pub n: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sample under do(A := nu) for this constant nu (comma separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub intervention: Option<Vec<f64>>,
    /// Covariance of a random intervention around `--intervention` (rows separated by ';').
    #[arg(long, allow_hyphen_values = true)]
    pub intervention_cov: Option<String>,
    /// Base distribution of the noise terms.
    #[arg(long, default_value = "gaussian")]
    pub noise: String,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV. Without `--schema` the columns must be named x1.., y, a1.., w1.., z1.., group.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Ingestion schema mapping raw columns to roles ("pollution" or a JSON file).
    #[arg(long)]
    pub schema: Option<String>,
    /// Synthesize proxies W (and Z) from the single anchor column at this SVR.
    #[arg(long)]
    pub proxy_svr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// ols, ar, par, xpar, tar, ptar or xtar.
    #[arg(long)]
    pub method: String,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Target mean of the intervened anchor or proxy (targeted methods).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub target_mean: Option<Vec<f64>>,
    /// Target covariance, rows separated by ';'.
    #[arg(long, allow_hyphen_values = true)]
    pub target_cov: Option<String>,
    /// Use uncentred moments (no intercept).
    #[arg(long)]
    pub no_intercept: bool,
    /// Rescale X columns to unit variance before fitting.
    #[arg(long)]
    pub standardize: bool,
    /// Save the predictor record here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictor record written by `fit`.
    #[arg(long)]
    pub predictor: PathBuf,
    /// Empirical MSPE on this dataset.
    #[arg(long, conflicts_with = "scm")]
    pub data: Option<PathBuf>,
    /// Population MSPE under this model.
    #[arg(long, required_unless_present = "data")]
    pub scm: Option<String>,
    /// Intervention mean; observational when omitted.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub intervention: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub intervention_cov: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetArg {
    Ols,
    Ar,
    Par,
}

#[derive(Debug, Args)]
pub struct WorstCaseArgs {
    #[arg(long)]
    pub predictor: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub set: SetArg,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Observed covariance of (X, Y, W): "suppB" or a JSON file with `sigma`, `lambda`, `grid_step`.
    #[arg(long, default_value = "suppB")]
    pub config: String,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Write the family table as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// robustness, misspecified-svr, causal-anticausal, targeted or custom.
    pub kind: String,
    /// Bundle name or JSON file; the kind's built-in bundle when omitted.
    #[arg(long)]
    pub config: Option<String>,
    /// Number of replicates.
    #[arg(long)]
    pub m: Option<usize>,
    /// Training sample size (replaces the configured list).
    #[arg(long)]
    pub n: Option<usize>,
    /// Result file; `$PROXY_ANCHOR_OUT_DIR/<kind>.<ext>` when omitted and that variable is set.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// untargeted method scored on each held-out group.
    #[arg(long, default_value = "par")]
    pub method: String,
    /// Candidate lambdas.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub grid: Option<Vec<f64>>,
}
