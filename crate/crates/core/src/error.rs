use thiserror::Error;

pub type Result<T> = std::result::Result<T, PvarError>;

/// Every failure the estimation pipeline can report.
#[derive(Debug, Error)]
pub enum PvarError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("duplicate observation for unit `{unit}` at time {time}")]
    DuplicateKey { unit: String, time: i64 },
    #[error("unbalanced panel: {0}")]
    UnbalancedPanel(String),
    #[error("non-positive denominator in `{var}` for unit `{unit}` at time {time}")]
    DegenerateDenominator { var: String, unit: String, time: i64 },
    #[error("too few periods: need {needed}, have {available}")]
    TooFewPeriods { needed: usize, available: usize },
    #[error("too few observations: need {needed}, have {available}")]
    TooFewObservations { needed: usize, available: usize },
    #[error("singular design matrix: {0}")]
    SingularDesign(String),
    #[error("degenerate residuals: {0}")]
    DegenerateResiduals(String),
    #[error("instrument has no variation")]
    DegenerateInstrument,
    #[error("denominator {value:e} is numerically zero")]
    WeakDenominator { value: f64 },
    #[error("normalization matrix Q is singular")]
    SingularQ,
    #[error("standardized shock scale is not real: implied variance {0:e}")]
    NormalizationFailure(f64),
    #[error("grid does not bracket the confidence set: {0}")]
    GridInsufficient(String),
    #[error("singular covariance: {0}")]
    SingularCovariance(String),
    #[error("factorization failed: {0}")]
    FactorizationError(String),
    #[error("slope matrices are not stationary (spectral radius {0:.4})")]
    Nonstationary(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl PvarError {
    /// Input or configuration problems, as opposed to numerical breakdowns.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            PvarError::Io { .. }
                | PvarError::ParseError { .. }
                | PvarError::MissingColumn(_)
                | PvarError::DuplicateKey { .. }
                | PvarError::UnbalancedPanel(_)
                | PvarError::DegenerateDenominator { .. }
                | PvarError::TooFewPeriods { .. }
                | PvarError::TooFewObservations { .. }
                | PvarError::InvalidConfig(_)
                | PvarError::DimensionMismatch(_)
                | PvarError::Serialization(_)
        )
    }
}

impl From<csv::Error> for PvarError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        PvarError::ParseError {
            line,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for PvarError {
    fn from(e: serde_json::Error) -> Self {
        PvarError::Serialization(e.to_string())
    }
}
