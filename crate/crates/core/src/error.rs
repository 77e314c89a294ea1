use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RdError {
    #[error("unsupported kernel `{0}` (valid kernels: triangular, epanechnikov, uniform)")]
    UnsupportedKernel(String),

    #[error("unsupported moment request: order {order}, squared = {squared}")]
    UnsupportedMoment { order: usize, squared: bool },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("too few observations: {what} (have {have}, need {need})")]
    TooFewObservations {
        what: &'static str,
        have: usize,
        need: usize,
    },

    #[error("weighted design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("covariate {index} is locally degenerate (loading {loading:e})")]
    DegenerateCovariate { index: usize, loading: f64 },

    #[error("density estimate at the cutoff is not positive ({0:e})")]
    DegenerateDensity(f64),

    #[error("normal quantile is not finite: {0}")]
    NonfiniteQuantile(String),

    #[error("first-stage jump {0:.4} is too small for a reliable fuzzy estimate")]
    WeakJump(f64),

    #[error("no observations inside the bandwidth")]
    EmptyEffectiveSample,

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("column `{0}` not found in input")]
    MissingColumn(String),

    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no complete rows left after dropping {dropped} incomplete ones")]
    EmptyAfterFiltering { dropped: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl RdError {
    /// True for errors caused by user input or configuration rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            RdError::UnsupportedKernel(_)
                | RdError::InvalidConfig(_)
                | RdError::MissingColumn(_)
                | RdError::NonNumericCell { .. }
                | RdError::EmptyAfterFiltering { .. }
                | RdError::Io(_)
                | RdError::InvalidData(_)
        )
    }
}

impl From<std::io::Error> for RdError {
    fn from(e: std::io::Error) -> Self {
        RdError::Io(e.to_string())
    }
}

impl From<csv::Error> for RdError {
    fn from(e: csv::Error) -> Self {
        RdError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RdError>;
