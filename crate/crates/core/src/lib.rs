//! D-optimal experimental designs for nonlinear regression models with one
//! nonlinear parameter: local, Bayesian and standardized maximin criteria,
//! equivalence certificates, and numerical checks of the conditions under
//! which the number of support points grows without bound.

pub mod bayes;
pub mod design;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod local;
pub mod maximin;
pub mod models;
pub mod quadrature;
pub mod theory;

pub(crate) mod engine;
pub(crate) mod joint;

pub use bayes::{bayes_criterion, solve_bayes, verify_bayes};
pub use design::{canonical_merge, information_matrix, DesignMeasure, MergeRule, ScaleFunction};
pub use error::{DesignError, Result};
pub use grid::{BetaGrid, BetaSpacing, GridSpec};
pub use local::{solve_local, verify_local, EquivalenceCertificate};
pub use maximin::{efficiency_curve, maximin_criterion, solve_maximin, verify_maximin};
pub use models::ModelSpec;
pub use quadrature::ParameterPrior;
