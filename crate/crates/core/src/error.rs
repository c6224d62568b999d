use thiserror::Error;

/// Errors raised across the bound, estimation and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite: {0}")]
    NonPositiveDefinite(&'static str),

    #[error("matrix is singular: {0}")]
    SingularMatrix(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("conditional variance exceeds total variance (min eigenvalue of difference {min_eigenvalue:e})")]
    OrderViolation { min_eigenvalue: f64 },

    #[error("nu = {0} outside (0, 1]")]
    DomainError(f64),

    #[error("computed bound is negative ({0} nats)")]
    NegativeBound(f64),

    #[error("{0} of pseudo-input draws fell outside the channel domain")]
    DomainEscape(f64),

    #[error("could not invert the conditional mean at {0}")]
    InversionFailure(f64),

    #[error("search box is infeasible: {0}")]
    InfeasibleSearchBox(String),

    #[error("value {0} lies outside the support of the input distribution")]
    SupportViolation(f64),

    #[error("too few observations: got {got}, need at least {min}")]
    TooFewPoints { got: usize, min: usize },

    #[error("sample contains duplicate joint points")]
    DuplicatePoints,

    #[error("design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("lambda grid is empty")]
    EmptyGrid,

    #[error("estimated nu = {0} is not positive")]
    InvalidNu(f64),

    #[error("{invalid} of {total} bootstrap resamples were invalid")]
    DegenerateBootstrap { invalid: usize, total: usize },

    #[error("Monte Carlo average did not settle: drift {drift:e} exceeds 3 x stderr {stderr:e}")]
    NonConvergence { drift: f64, stderr: f64 },

    #[error("{excluded} of {total} replicates failed")]
    ScenarioFailed { excluded: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
