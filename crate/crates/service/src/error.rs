use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] alsed_core::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt project file {path}: {reason}")]
    Corrupt { path: std::path::PathBuf, reason: String },
    #[error("background task failed: {0}")]
    Task(String),
}

impl ServiceError {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn status(&self) -> StatusCode {
        use alsed_core::Error as E;
        match self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Core(e) => match e {
                E::UnknownSegment(_) | E::UnknownRecording(_) => StatusCode::NOT_FOUND,
                E::BatchOpen(_) | E::AlreadyAnnotated(_) | E::NotInBatch(_) => StatusCode::CONFLICT,
                E::UnknownClass(_)
                | E::EventOutOfBounds { .. }
                | E::Config(_)
                | E::Audio { .. }
                | E::UnsupportedEncoding { .. }
                | E::EmptyAudio(_)
                | E::ClipTooShort { .. }
                | E::EmptyPool
                | E::NoAnnotations
                | E::NoTrainingData => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
            Self::Io { .. } | Self::Corrupt { .. } | Self::Task(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
