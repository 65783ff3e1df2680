use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// An inconsistent or unusable configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// An estimator could not produce a value.
    #[error("estimation failure ({code}): {detail}")]
    Estimation { code: FailCode, detail: String },
    /// An operation was called on the wrong variant.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Machine-readable failure codes, written to the `fail_code` column of
/// replicate tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailCode {
    NonPositiveAmplitude,
    NotConverged,
    NonFinite,
    Unidentifiable,
    DegenerateVariance,
    Simulation,
}

impl FailCode {
    pub fn as_str(self) -> &'static str {
        match self {
            FailCode::NonPositiveAmplitude => "non_positive_amplitude",
            FailCode::NotConverged => "not_converged",
            FailCode::NonFinite => "non_finite",
            FailCode::Unidentifiable => "unidentifiable",
            FailCode::DegenerateVariance => "degenerate_variance",
            FailCode::Simulation => "simulation",
        }
    }
}

impl std::fmt::Display for FailCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Error {
    pub(crate) fn estimation(code: FailCode, detail: impl Into<String>) -> Self {
        Error::Estimation { code, detail: detail.into() }
    }

    /// Failure code for per-replicate bookkeeping.
    pub fn fail_code(&self) -> FailCode {
        match self {
            Error::Estimation { code, .. } => *code,
            Error::Numeric(_) => FailCode::NonFinite,
            _ => FailCode::Simulation,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
