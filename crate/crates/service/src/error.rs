use aact_core::counterfactual::EngineError;
use aact_core::study::StudyError;
use aact_core::workflow::{TranscriptError, WorkflowError};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("task `{0}` not found")]
    TaskNotFound(String),
    #[error("no tasks loaded")]
    NoTasks,
    #[error("malformed request body: {0}")]
    MalformedBody(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("failed to persist transcript: {0}")]
    Persist(#[from] TranscriptError),
    #[error("startup failed: {0}")]
    Startup(#[from] StudyError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    /// Stable machine-readable code sent to clients.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::SessionNotFound(_) => "session_not_found",
            ServiceError::TaskNotFound(_) => "task_not_found",
            ServiceError::NoTasks => "no_tasks",
            ServiceError::MalformedBody(_) => "malformed_body",
            ServiceError::Workflow(e) => match e {
                WorkflowError::UnexpectedStep { .. } => "unexpected_step",
                WorkflowError::NoPrompt(_) => "no_prompt",
                WorkflowError::UnknownMode(_)
                | WorkflowError::InvalidDecision(_)
                | WorkflowError::InvalidArgument(_)
                | WorkflowError::ConfidenceRange(_)
                | WorkflowError::TaskMismatch(_)
                | WorkflowError::Engine(EngineError::InvalidParams(_)) => "invalid_input",
                WorkflowError::NotImplemented(_) | WorkflowError::Engine(EngineError::NotImplemented(_)) => {
                    "not_implemented"
                }
                _ => "internal",
            },
            ServiceError::Persist(_) => "persist_failed",
            ServiceError::Startup(_) | ServiceError::Bind { .. } | ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self.code() {
            "session_not_found" | "task_not_found" => StatusCode::NOT_FOUND,
            "malformed_body" => StatusCode::BAD_REQUEST,
            "unexpected_step" | "no_prompt" => StatusCode::CONFLICT,
            "invalid_input" => StatusCode::UNPROCESSABLE_ENTITY,
            "not_implemented" => StatusCode::NOT_IMPLEMENTED,
            "no_tasks" => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code().to_string(),
                message: self.to_string(),
            },
        };
        (status, Json(body)).into_response()
    }
}
