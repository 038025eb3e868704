use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integration produced non-finite values at t = {time}")]
    IntegrationFailure { time: f64 },

    #[error("trajectory record does not store noise increments")]
    MissingIncrements,

    #[error("trajectory record is strided (stride {stride}); every step must be stored")]
    StridedPath { stride: usize },

    #[error("time {time} is not on the solver grid")]
    OffGrid { time: f64 },

    #[error("empty averaging window")]
    EmptyWindow,

    #[error("degenerate sample variance")]
    DegenerateVariance,
}

impl Error {
    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Domain(_) => "E_DOMAIN",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::IntegrationFailure { .. } => "E_INTEGRATION",
            Error::MissingIncrements => "E_MISSING_INCREMENTS",
            Error::StridedPath { .. } => "E_STRIDED_PATH",
            Error::OffGrid { .. } => "E_OFF_GRID",
            Error::EmptyWindow => "E_EMPTY_WINDOW",
            Error::DegenerateVariance => "E_DEGENERATE_VARIANCE",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
