use optdesign::{BetaGrid, DesignMeasure, EquivalenceCertificate, GridSpec, ParameterPrior};
use serde::{Deserialize, Serialize};

/// Model as named on the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
}

/// Optimality problem a design was computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "criterion", rename_all = "kebab-case")]
pub enum Problem {
    Local { beta: f64 },
    Bayes { prior: ParameterPrior },
    Maximin { beta_grid: BetaGrid },
}

/// Design file written by `local`, `bayes` and `maximin` and read by `verify`.
///
/// `value` is `log det M(xi, beta)` for local designs, the standardized
/// Bayesian criterion for Bayesian designs, and the worst-case efficiency for
/// maximin designs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignDocument {
    pub model: ModelRef,
    pub problem: Problem,
    pub grid: GridSpec,
    pub design: DesignMeasure,
    pub value: f64,
    pub certificate: EquivalenceCertificate,
}

/// Output of `verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub value: f64,
    pub certificate: EquivalenceCertificate,
}
