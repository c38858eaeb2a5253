use thiserror::Error;

/// Errors raised anywhere in the design pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("matrix of dimension {dim} is not positive definite (jitter cap {jitter_cap:e})")]
    NotPositiveDefinite { dim: usize, jitter_cap: f64 },

    #[error("triangular factor is singular at diagonal index {index}")]
    Singular { index: usize },

    #[error("MCMC mixing failure: {diagnostics}")]
    MixingFailure { diagnostics: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite finite-difference derivative for parameter {param}")]
    DerivativeFailure { param: usize },

    #[error("numerical failure in {context}{}", candidate.map(|c| format!(" (candidate {c})")).unwrap_or_default())]
    NumericalFailure {
        context: String,
        candidate: Option<usize>,
    },

    #[error("no finite score among {count} candidates")]
    SelectionFailure { count: usize },

    #[error("non-positive conditional variance {conditional_variance:e}; candidate duplicates an observed location")]
    ConditioningError { conditional_variance: f64 },

    #[error("precomputed covariance needs {bytes} bytes, limit is {limit}")]
    PrecomputeTooLarge { bytes: usize, limit: usize },

    #[error("candidate {candidate} was already selected")]
    DuplicateSelection { candidate: usize },

    #[error("ODE state became non-finite at t = {time}")]
    IntegrationBlowup { time: f64 },

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
