//! HTTP status mapping for every error the service can produce.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::json;

use scribe_core::asr::AsrError;
use scribe_core::llm::LlmError;
use scribe_core::template::Violation;
use scribe_core::ScribeError;

use crate::auth::AuthError;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Scribe(#[from] ScribeError),
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    Forbidden(String),
    #[error("upload exceeds the {0}-byte limit")]
    PayloadTooLarge(u64),
    /// A request the router or an extractor refused, with its status.
    #[error("{1}")]
    Rejected(StatusCode, String),
    #[error("{0}")]
    Invalid(String),
}

impl From<AuthError> for ApiError {
    fn from(err: AuthError) -> Self {
        match err {
            AuthError::Unauthorized(msg) => Self::Unauthorized(msg),
            AuthError::Lookup(e) => Self::Scribe(e),
        }
    }
}

/// Status and machine-readable code for an orchestrator error.
pub fn scribe_status(err: &ScribeError) -> (StatusCode, &'static str) {
    use ScribeError as E;
    match err {
        E::NotFound { .. } => (StatusCode::NOT_FOUND, "not_found"),
        E::IllegalTransition(_) => (StatusCode::CONFLICT, "illegal_transition"),
        E::VersionConflict => (StatusCode::CONFLICT, "version_conflict"),
        E::SessionArchived(_) => (StatusCode::CONFLICT, "session_archived"),
        E::UnsupportedMedia(_) => (StatusCode::UNSUPPORTED_MEDIA_TYPE, "unsupported_media"),
        E::EmptyAudio => (StatusCode::UNPROCESSABLE_ENTITY, "empty_audio"),
        E::UnknownUser(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_user"),
        E::UnknownFacility(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_facility"),
        E::SectionMismatch(_) => (StatusCode::UNPROCESSABLE_ENTITY, "section_mismatch"),
        E::TranscriptNotReady(_) => (StatusCode::UNPROCESSABLE_ENTITY, "transcript_not_ready"),
        E::EmptyTranscript => (StatusCode::UNPROCESSABLE_ENTITY, "empty_transcript"),
        E::TemplateInvalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "template_invalid"),
        E::Invariant(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invariant_violation"),
        E::Asr(e) => asr_status(e),
        E::Llm(e) => llm_status(e),
        E::StorageFull => (StatusCode::INSUFFICIENT_STORAGE, "storage_full"),
        E::Dangling(_) | E::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

fn asr_status(err: &AsrError) -> (StatusCode, &'static str) {
    match err {
        AsrError::EmptyAudio => (StatusCode::UNPROCESSABLE_ENTITY, "empty_audio"),
        AsrError::UnknownBackend(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_backend"),
        AsrError::BackendUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable"),
        AsrError::BackendRejected(_) => (StatusCode::BAD_GATEWAY, "backend_rejected"),
        AsrError::InvalidDescriptor(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

fn llm_status(err: &LlmError) -> (StatusCode, &'static str) {
    match err {
        LlmError::UnknownBackend(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_backend"),
        LlmError::ContextOverflow(_) => (StatusCode::UNPROCESSABLE_ENTITY, "context_overflow"),
        LlmError::BackendUnavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable"),
        LlmError::BackendRejected(_) => (StatusCode::BAD_GATEWAY, "backend_rejected"),
        LlmError::MalformedOutput(_) => (StatusCode::BAD_GATEWAY, "malformed_output"),
        LlmError::InvalidDescriptor(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl ApiError {
    pub fn status(&self) -> (StatusCode, &'static str) {
        match self {
            Self::Scribe(e) => scribe_status(e),
            Self::Unauthorized(_) => (StatusCode::UNAUTHORIZED, "unauthorized"),
            Self::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            Self::PayloadTooLarge(_) => (StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large"),
            Self::Rejected(status, _) => (*status, "bad_request"),
            Self::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
        }
    }
}

#[derive(Serialize)]
struct Body<'a> {
    code: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    violations: Option<&'a [Violation]>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status();
        let message = if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %self, "request failed");
            "internal error".to_owned()
        } else {
            self.to_string()
        };
        let violations = match &self {
            Self::Scribe(ScribeError::TemplateInvalid(v)) => Some(v.as_slice()),
            _ => None,
        };
        let body = Body { code, message, violations };
        let mut response = (status, Json(json!({ "error": body }))).into_response();
        if status == StatusCode::UNAUTHORIZED {
            response
                .headers_mut()
                .insert(axum::http::header::WWW_AUTHENTICATE, "Bearer".parse().expect("static header"));
        }
        response
    }
}
