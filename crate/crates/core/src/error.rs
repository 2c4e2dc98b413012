use thiserror::Error;

pub type Result<T> = std::result::Result<T, LrvbError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LrvbError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("matrix is not symmetric at ({row}, {col}): {upper} vs {lower}")]
    NonSymmetric {
        row: usize,
        col: usize,
        upper: f64,
        lower: f64,
    },

    #[error("unknown parameter block `{0}`")]
    UnknownBlock(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{factor} parameters are outside the interior of their family: {detail}")]
    NonInterior { factor: String, detail: String },

    #[error("component {component} is degenerate (expected count {count:.3e})")]
    Degenerate { component: usize, count: f64 },

    #[error(
        "linear system is singular or near-singular (smallest singular value {smallest:.3e}, \
         norm {norm:.3e}); the variational optimum may be degenerate"
    )]
    Singular { smallest: f64, norm: f64 },

    #[error("{what} did not converge after {iterations} iterations (max change {max_change:.3e})")]
    Unconverged {
        what: String,
        iterations: usize,
        max_change: f64,
    },
}

impl LrvbError {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LrvbError::NonInterior { .. }
                | LrvbError::Degenerate { .. }
                | LrvbError::Singular { .. }
                | LrvbError::Unconverged { .. }
        )
    }
}
