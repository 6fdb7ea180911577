use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Local, Bayesian and standardized maximin D-optimal designs.
#[derive(Parser, Debug)]
#[command(name = "optdesign", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Local D-optimal design for a single parameter guess.
    Local(LocalArgs),
    /// Bayesian D-optimal design for a prior on the nonlinear parameter.
    Bayes(BayesArgs),
    /// Standardized maximin D-optimal design over a parameter interval.
    Maximin(MaximinArgs),
    /// Re-certify a design file written by local, bayes or maximin.
    Verify(VerifyArgs),
    /// Numerical checks of the structural conditions and lower-bound designs.
    Theory(TheoryArgs),
    /// Support counts as the parameter interval [1, B] grows.
    Growth(GrowthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// exp1 | exp2 | exp3 | logistic.
    #[arg(long)]
    pub model: String,
    /// Right end of the logistic design interval.
    #[arg(long)]
    pub x_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum XSpacing {
    Uniform,
    LogTilted,
}

#[derive(Args, Debug, Clone)]
pub struct XGridArgs {
    /// Points of the candidate grid on the design interval.
    #[arg(long, default_value_t = 2001)]
    pub grid_count: usize,
    /// Candidate grid layout; log-tilted adds points accumulating at the left end.
    #[arg(long, value_enum)]
    pub grid_spacing: Option<XSpacing>,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// JSON output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Two-column text file with the directional derivative `x  d(x)`.
    #[arg(long)]
    pub derivative_curve: Option<PathBuf>,
    /// Two-column text file with the efficiency `beta  eff(beta)`.
    #[arg(long)]
    pub efficiency_curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct LocalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub beta: f64,
    #[command(flatten)]
    pub grid: XGridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct BayesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// uniform:LO:HI | trunc-exp:A | discrete:L | point:BETA.
    #[arg(long)]
    pub prior: String,
    /// Quadrature nodes for continuous priors.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[command(flatten)]
    pub grid: XGridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BetaSpacingArg {
    Log,
    Uniform,
}

#[derive(Args, Debug)]
pub struct MaximinArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Parameter interval as LO:HI.
    #[arg(long)]
    pub beta_range: String,
    /// Points of the parameter grid.
    #[arg(long, default_value_t = 400)]
    pub beta_count: usize,
    #[arg(long, value_enum, default_value_t = BetaSpacingArg::Log)]
    pub beta_spacing: BetaSpacingArg,
    #[command(flatten)]
    pub grid: XGridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Design file written by local, bayes or maximin.
    pub design: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Check {
    /// Efficiency envelope and the lambda band.
    QDecay,
    /// Dominance of point tuples by local designs.
    #[value(name = "cond29")]
    Dominance,
    /// Lower-bound mixture designs and their guaranteed efficiencies.
    LowerBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Identity,
    Log,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[arg(long, value_enum)]
    pub check: Check,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Parameter interval as LO:HI.
    #[arg(long)]
    pub beta_range: Option<String>,
    /// Parameter samples per axis (q-decay) or parameter grid size (dominance).
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    /// Point samples per coordinate for dominance tuples.
    #[arg(long, default_value_t = 21)]
    pub points: usize,
    /// Envelope as exponential:C1:GAMMA or power:C1:GAMMA.
    #[arg(long)]
    pub envelope: Option<String>,
    /// Scale function; log for the exponential models, identity for logistic by default.
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    /// Band half-width for lower-bound designs.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// JSON output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GrowthCriterionArg {
    Maximin,
    Bayes,
}

#[derive(Args, Debug)]
pub struct GrowthArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub criterion: GrowthCriterionArg,
    /// Ascending comma-separated upper ends of the parameter intervals [1, B].
    #[arg(long = "B", value_delimiter = ',', required = true)]
    pub b: Vec<f64>,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
