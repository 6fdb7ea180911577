use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("parameter {beta} outside admissible range [{lo}, {hi}]")]
    Domain { beta: f64, lo: f64, hi: f64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("degenerate design: every weight fell below the floor {floor}")]
    Degenerate { floor: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("information matrix is singular at beta = {beta}")]
    Singular { beta: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, DesignError>;
