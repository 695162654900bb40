use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{message}")]
    Invalid {
        message: String,
        field: Option<String>,
    },

    #[error("{what} = {value} exceeds the cap of {cap}")]
    CapExceeded {
        what: &'static str,
        field: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("session `{0}` not found")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),

    #[error(transparent)]
    Engine(#[from] prefbo_core::Error),
}

impl ApiError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::Invalid {
            message: message.into(),
            field: Some(field.into()),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Invalid { .. } | ApiError::CapExceeded { .. } => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Engine(prefbo_core::Error::InvalidInput(_)) => StatusCode::BAD_REQUEST,
            ApiError::Journal(_) | ApiError::Engine(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (code, field) = match self {
            ApiError::Invalid { field, .. } => ("invalid_request", field.clone()),
            ApiError::CapExceeded { field, .. } => ("cap_exceeded", Some(field.to_string())),
            ApiError::NotFound(_) => ("not_found", None),
            ApiError::Conflict(_) => ("conflict", None),
            ApiError::Engine(prefbo_core::Error::InvalidInput(_)) => ("invalid_request", None),
            ApiError::Journal(_) => ("journal_failure", None),
            ApiError::Engine(_) => ("engine_failure", None),
        };
        ErrorBody {
            code: code.into(),
            message: self.to_string(),
            field,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
