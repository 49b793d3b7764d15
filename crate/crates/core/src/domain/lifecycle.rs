//! Lifecycle tables for recordings and notes.
//!
//! ```text
//! recording: uploaded --start--> transcribing --succeeded--> transcribed
//!                                             \--failed----> failed
//!
//! note:      generating --succeeded--> draft --edit--> edited --edit--> edited
//!                       \--failed----> failed
//!            draft | edited --finalize--> finalized
//! ```
//!
//! Any pair not listed is an [`IllegalTransition`] and leaves the caller's
//! state untouched. `finalized`, `transcribed` and both `failed` states are
//! terminal.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::EntityKind;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal {entity} transition: `{event}` from `{from}`")]
pub struct IllegalTransition {
    pub entity: EntityKind,
    pub from: &'static str,
    pub event: &'static str,
}

/// A status type driven by a closed set of events.
pub trait Lifecycle: Copy + Eq + fmt::Debug + 'static {
    type Event: Copy + Eq + fmt::Debug + 'static;

    const ENTITY: EntityKind;
    const STATUSES: &'static [Self];
    const EVENTS: &'static [Self::Event];

    fn next(self, event: Self::Event) -> Result<Self, IllegalTransition>;

    fn is_terminal(self) -> bool {
        Self::EVENTS.iter().all(|e| self.next(*e).is_err())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingStatus {
    Uploaded,
    Transcribing,
    Transcribed,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordingEvent {
    TranscriptionStarted,
    TranscriptionSucceeded,
    TranscriptionFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteStatus {
    Generating,
    Draft,
    Edited,
    Finalized,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteEvent {
    GenerationSucceeded,
    GenerationFailed,
    Edit,
    Finalize,
}

impl RecordingStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uploaded => "uploaded",
            Self::Transcribing => "transcribing",
            Self::Transcribed => "transcribed",
            Self::Failed => "failed",
        }
    }
}

impl RecordingEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TranscriptionStarted => "transcription_started",
            Self::TranscriptionSucceeded => "transcription_succeeded",
            Self::TranscriptionFailed => "transcription_failed",
        }
    }
}

impl NoteStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Generating => "generating",
            Self::Draft => "draft",
            Self::Edited => "edited",
            Self::Finalized => "finalized",
            Self::Failed => "failed",
        }
    }

    /// Whether the note holds reviewable generated content.
    pub fn has_content(self) -> bool {
        matches!(self, Self::Draft | Self::Edited | Self::Finalized)
    }
}

impl NoteEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GenerationSucceeded => "generation_succeeded",
            Self::GenerationFailed => "generation_failed",
            Self::Edit => "edit",
            Self::Finalize => "finalize",
        }
    }
}

impl Lifecycle for RecordingStatus {
    type Event = RecordingEvent;

    const ENTITY: EntityKind = EntityKind::Recording;
    const STATUSES: &'static [Self] =
        &[Self::Uploaded, Self::Transcribing, Self::Transcribed, Self::Failed];
    const EVENTS: &'static [RecordingEvent] = &[
        RecordingEvent::TranscriptionStarted,
        RecordingEvent::TranscriptionSucceeded,
        RecordingEvent::TranscriptionFailed,
    ];

    fn next(self, event: RecordingEvent) -> Result<Self, IllegalTransition> {
        use RecordingEvent as E;
        match (self, event) {
            (Self::Uploaded, E::TranscriptionStarted) => Ok(Self::Transcribing),
            (Self::Transcribing, E::TranscriptionSucceeded) => Ok(Self::Transcribed),
            (Self::Transcribing, E::TranscriptionFailed) => Ok(Self::Failed),
            _ => Err(IllegalTransition {
                entity: EntityKind::Recording,
                from: self.as_str(),
                event: event.as_str(),
            }),
        }
    }
}

impl Lifecycle for NoteStatus {
    type Event = NoteEvent;

    const ENTITY: EntityKind = EntityKind::Note;
    const STATUSES: &'static [Self] =
        &[Self::Generating, Self::Draft, Self::Edited, Self::Finalized, Self::Failed];
    const EVENTS: &'static [NoteEvent] = &[
        NoteEvent::GenerationSucceeded,
        NoteEvent::GenerationFailed,
        NoteEvent::Edit,
        NoteEvent::Finalize,
    ];

    fn next(self, event: NoteEvent) -> Result<Self, IllegalTransition> {
        use NoteEvent as E;
        match (self, event) {
            (Self::Generating, E::GenerationSucceeded) => Ok(Self::Draft),
            (Self::Generating, E::GenerationFailed) => Ok(Self::Failed),
            (Self::Draft | Self::Edited, E::Edit) => Ok(Self::Edited),
            (Self::Draft | Self::Edited, E::Finalize) => Ok(Self::Finalized),
            _ => Err(IllegalTransition {
                entity: EntityKind::Note,
                from: self.as_str(),
                event: event.as_str(),
            }),
        }
    }
}

impl fmt::Display for RecordingStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for NoteStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Untyped entry point used by callers that carry statuses as strings.
pub fn next_state(
    entity: EntityKind,
    current: &str,
    event: &str,
) -> Result<&'static str, NextStateError> {
    fn step<L: Lifecycle>(
        current: &str,
        event: &str,
        status_name: fn(L) -> &'static str,
        event_name: fn(L::Event) -> &'static str,
    ) -> Result<&'static str, NextStateError> {
        let status = L::STATUSES
            .iter()
            .copied()
            .find(|s| status_name(*s) == current)
            .ok_or_else(|| NextStateError::UnknownStatus(current.to_owned()))?;
        let event = L::EVENTS
            .iter()
            .copied()
            .find(|e| event_name(*e) == event)
            .ok_or_else(|| NextStateError::UnknownEvent(event.to_owned()))?;
        Ok(status_name(status.next(event)?))
    }

    match entity {
        EntityKind::Recording => {
            step::<RecordingStatus>(current, event, RecordingStatus::as_str, RecordingEvent::as_str)
        }
        EntityKind::Note => step::<NoteStatus>(current, event, NoteStatus::as_str, NoteEvent::as_str),
        other => Err(NextStateError::NoLifecycle(other)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NextStateError {
    #[error(transparent)]
    Illegal(#[from] IllegalTransition),
    #[error("unknown status `{0}`")]
    UnknownStatus(String),
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("{0} has no lifecycle")]
    NoLifecycle(EntityKind),
}
