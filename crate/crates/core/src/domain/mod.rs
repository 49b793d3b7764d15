//! Core entity types, identifiers and lifecycle rules.

mod entities;
mod ids;
mod lifecycle;
mod status;
mod time;

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use entities::{
    Facility, MediaFormat, Note, NoteSection, Recording, Role, Segment, Session, TokenUsage,
    Transcript, UserProfile, SEGMENT_END_SLACK_S,
};
pub use ids::{
    random_hex_id, FacilityId, JobId, NoteId, RecordingId, SessionId, TemplateId, TranscriptId,
    UserId,
};
pub use lifecycle::{
    next_state, IllegalTransition, Lifecycle, NextStateError, NoteEvent, NoteStatus,
    RecordingEvent, RecordingStatus,
};
pub use status::{
    derive_session_status, session_audio_seconds, DanglingReference, MemoryView, SessionStatus,
    StoreView,
};
pub use time::{InvalidMonth, Timestamp, YearMonth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Session,
    Recording,
    Transcript,
    Note,
    Template,
    User,
    Facility,
    Job,
}

impl EntityKind {
    pub const ALL: [EntityKind; 8] = [
        Self::Session,
        Self::Recording,
        Self::Transcript,
        Self::Note,
        Self::Template,
        Self::User,
        Self::Facility,
        Self::Job,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Session => "session",
            Self::Recording => "recording",
            Self::Transcript => "transcript",
            Self::Note => "note",
            Self::Template => "template",
            Self::User => "user",
            Self::Facility => "facility",
            Self::Job => "job",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown entity kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invariant violated: {0}")]
pub struct InvariantViolation(pub String);

impl InvariantViolation {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// A record persisted whole under `kind/id`.
pub trait Entity: Serialize + DeserializeOwned + Clone + Send + Sync + 'static {
    const KIND: EntityKind;
    type Id: fmt::Display + Clone + Send + Sync;

    fn id(&self) -> &Self::Id;

    /// Self-contained invariants; cross-entity references are checked by
    /// the orchestrator.
    fn validate(&self) -> Result<(), InvariantViolation>;
}
