use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Machine-readable error document shared by the CLI (stderr) and the HTTP
/// API (response body).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{what} '{id}' not found")]
    NotFound { what: &'static str, id: String },

    #[error("{message}")]
    Conflict { code: &'static str, message: String, detail: Value },

    #[error("{message}")]
    InvalidBody { message: String, detail: Value },

    #[error(transparent)]
    Core(#[from] kohdesign::Error),

    #[error("{0}")]
    Internal(String),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn conflict(code: &'static str, message: impl Into<String>, detail: Value) -> Self {
        Self::Conflict { code, message: message.into(), detail }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::InvalidBody { message: message.into(), detail: Value::Null }
    }

    pub fn status(&self) -> u16 {
        use kohdesign::Error as E;
        match self {
            Self::NotFound { .. } => 404,
            Self::Conflict { .. } => 409,
            Self::InvalidBody { .. } => 422,
            Self::Core(e) => match e {
                E::DuplicateSelection { .. } | E::ConditioningError { .. } => 409,
                E::InvalidConfig(_)
                | E::DimensionMismatch { .. }
                | E::DomainViolation(_)
                | E::InvalidHyperparameter(_)
                | E::EmptyInput(_)
                | E::Json(_)
                | E::Toml(_)
                | E::Csv(_) => 422,
                _ => 500,
            },
            Self::Internal(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        use kohdesign::Error as E;
        match self {
            Self::NotFound { .. } => "not_found",
            Self::Conflict { code, .. } => code,
            Self::InvalidBody { .. } => "invalid_body",
            Self::Core(e) => match e {
                E::DimensionMismatch { .. } => "dimension_mismatch",
                E::InvalidHyperparameter(_) => "invalid_hyperparameter",
                E::NotPositiveDefinite { .. } => "not_positive_definite",
                E::Singular { .. } => "singular",
                E::MixingFailure { .. } => "mixing_failure",
                E::EmptyInput(_) => "empty_input",
                E::DerivativeFailure { .. } => "derivative_failure",
                E::NumericalFailure { .. } => "numerical_failure",
                E::SelectionFailure { .. } => "selection_failure",
                E::ConditioningError { .. } => "conditioning_error",
                E::PrecomputeTooLarge { .. } => "precompute_too_large",
                E::DuplicateSelection { .. } => "duplicate_selection",
                E::IntegrationBlowup { .. } => "integration_blowup",
                E::DomainViolation(_) => "domain_violation",
                E::InvalidConfig(_) => "invalid_config",
                E::Io(_) => "io",
                E::Json(_) => "invalid_json",
                E::Csv(_) => "invalid_csv",
                E::Toml(_) => "invalid_toml",
            },
            Self::Internal(_) => "internal",
        }
    }

    pub fn detail(&self) -> Value {
        use kohdesign::Error as E;
        match self {
            Self::NotFound { what, id } => json!({ "resource": what, "id": id }),
            Self::Conflict { detail, .. } | Self::InvalidBody { detail, .. } => detail.clone(),
            Self::Core(e) => match e {
                E::DimensionMismatch { context, expected, found } => {
                    json!({ "context": context, "expected": expected, "found": found })
                }
                E::DuplicateSelection { candidate } => json!({ "candidate_index": candidate }),
                E::NumericalFailure { context, candidate } => json!({ "context": context, "candidate_index": candidate }),
                E::SelectionFailure { count } => json!({ "candidates": count }),
                E::PrecomputeTooLarge { bytes, limit } => json!({ "bytes": bytes, "limit": limit }),
                _ => Value::Null,
            },
            Self::Internal(_) => Value::Null,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { code: self.code().to_string(), message: self.to_string(), detail: self.detail() }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        Self::Core(e.into())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        Self::Core(e.into())
    }
}
