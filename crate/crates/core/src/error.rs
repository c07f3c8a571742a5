use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite evaluation of `{what}` at x = {point:?}, t = {t}")]
    NonFinite {
        what: &'static str,
        point: Vec<f64>,
        t: f64,
    },

    #[error("integration failed at t = {t_last}: {reason}")]
    IntegrationFailure { t_last: f64, reason: String },

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e} (norm {norm:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64, norm: f64 },

    #[error("flow gradient is singular at t = {t} (condition number {condition:e})")]
    SingularGradient { t: f64, condition: f64 },

    #[error("{flagged} of {total} samples produced non-finite states")]
    TooManyFlagged { flagged: usize, total: usize },

    #[error("empty sample batch")]
    EmptyBatch,

    #[error("degenerate least-squares design: {0}")]
    DegenerateDesign(String),

    #[error("sweep cell (epsilon = {epsilon}, rho = {rho}) failed: {source}")]
    SweepCell {
        epsilon: f64,
        rho: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{missing} of {total} field nodes failed")]
    FieldIncomplete { missing: usize, total: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error("malformed {format}: {reason}")]
    Format { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. }
            | Error::IntegrationFailure { .. }
            | Error::NotPositiveSemidefinite { .. }
            | Error::SingularGradient { .. }
            | Error::TooManyFlagged { .. }
            | Error::DegenerateDesign(_)
            | Error::FieldIncomplete { .. } => true,
            Error::SweepCell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
