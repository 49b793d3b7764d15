use crate::asr::AsrError;
use crate::domain::{DanglingReference, IllegalTransition, InvariantViolation, SessionId, UserId};
use crate::llm::LlmError;
use crate::store::StoreError;
use crate::template::Violation;

/// Everything an orchestrator operation can fail with.
#[derive(Debug, thiserror::Error)]
pub enum ScribeError {
    #[error("{kind} {id} not found")]
    NotFound { kind: String, id: String },
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown facility {0}")]
    UnknownFacility(String),
    #[error("session {0} is archived")]
    SessionArchived(SessionId),
    #[error("audio is empty")]
    EmptyAudio,
    #[error("unsupported media: {0}")]
    UnsupportedMedia(String),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("sections do not match the note template: {0}")]
    SectionMismatch(String),
    #[error("transcript not ready: {0}")]
    TranscriptNotReady(String),
    #[error("every transcript is empty")]
    EmptyTranscript,
    #[error("template is invalid: {}", summarize(.0))]
    TemplateInvalid(Vec<Violation>),
    #[error("note was modified concurrently")]
    VersionConflict,
    #[error(transparent)]
    Asr(#[from] AsrError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error(transparent)]
    Dangling(#[from] DanglingReference),
    #[error("storage is full")]
    StorageFull,
    #[error(transparent)]
    Store(StoreError),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("{}: {}", v.field, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<StoreError> for ScribeError {
    fn from(err: StoreError) -> Self {
        match err {
            StoreError::NotFound { kind, id } => Self::NotFound { kind, id },
            StoreError::UnknownUser(u) => Self::UnknownUser(u),
            StoreError::Invariant(v) => Self::Invariant(v),
            StoreError::StorageFull => Self::StorageFull,
            StoreError::EmptyBlob => Self::EmptyAudio,
            other => Self::Store(other),
        }
    }
}
