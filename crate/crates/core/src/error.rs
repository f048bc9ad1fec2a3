use thiserror::Error;

/// Errors raised by the fitting, projection and debiasing routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid group specification: {0}")]
    InvalidGroups(String),

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite { what: String, row: usize, col: usize },

    #[error("column {0} is constant and cannot be standardized")]
    ConstantColumn(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    NotConverged { iterations: usize, kkt_residual: f64 },

    #[error("KKT identity violated: residual {residual:.3e} exceeds {tolerance:.1e}")]
    KktViolation { residual: f64, tolerance: f64 },

    #[error("value {value} lies outside the knot range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("replicate {index}: {source}")]
    Replicate { index: usize, source: Box<Error> },

    #[error("{stage} stage: {source}")]
    Stage { stage: Stage, source: Box<Error> },
}

/// Pipeline stage an error was raised in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Posterior,
    Tuning,
    Projection,
    Debias,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Posterior => "posterior",
            Stage::Tuning => "tuning",
            Stage::Projection => "projection",
            Stage::Debias => "debias",
        })
    }
}

impl Error {
    pub fn at(self, stage: Stage) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }

    /// Innermost stage label, looking through replicate wrappers.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, source } => source.stage().or(Some(*stage)),
            Error::Replicate { source, .. } => source.stage(),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
