//! REST API over a loaded checkpoint and an embedded cohort store:
//! patients, per-visit risk assessments, population summaries, advisory
//! narratives, model info and dashboard interaction events.

mod app;
mod assess;
mod events;
mod store;

pub use app::{router, serve, AppState, ServerHandle, ServiceConfig};
pub use assess::{assessment_response, task_definition, AssessmentResponse, VisitEntry};
pub use events::{EventKind, EventRecord, StoredEvent};
pub use store::{calibration_key, AssessmentKey, PopulationKey, Store};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("startup: {0}")]
    Startup(String),
    #[error("schema mismatch: checkpoint schema {checkpoint}, store schema {store}")]
    SchemaMismatch { checkpoint: String, store: String },
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl From<rusqlite::Error> for ServiceError {
    fn from(e: rusqlite::Error) -> Self {
        ServiceError::Internal(format!("store: {e}"))
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Internal(format!("json: {e}"))
    }
}

impl From<aicare_core::model::ModelError> for ServiceError {
    fn from(e: aicare_core::model::ModelError) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}
