use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::entities::{Note, Recording, Session};
use super::ids::{NoteId, RecordingId};
use super::lifecycle::{NoteStatus, RecordingStatus};
use super::EntityKind;

/// Read access to the children a session refers to.
pub trait StoreView {
    fn recording(&self, id: &RecordingId) -> Option<Recording>;
    fn note(&self, id: &NoteId) -> Option<Note>;
}

/// In-memory [`StoreView`], used for snapshots and tests.
#[derive(Debug, Clone, Default)]
pub struct MemoryView {
    pub recordings: HashMap<RecordingId, Recording>,
    pub notes: HashMap<NoteId, Note>,
}

impl MemoryView {
    pub fn insert_recording(&mut self, recording: Recording) {
        self.recordings.insert(recording.id.clone(), recording);
    }

    pub fn insert_note(&mut self, note: Note) {
        self.notes.insert(note.id.clone(), note);
    }
}

impl StoreView for MemoryView {
    fn recording(&self, id: &RecordingId) -> Option<Recording> {
        self.recordings.get(id).cloned()
    }

    fn note(&self, id: &NoteId) -> Option<Note> {
        self.notes.get(id).cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Empty,
    HasAudio,
    Transcribed,
    NoteReady,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("session refers to missing {kind} {id}")]
pub struct DanglingReference {
    pub kind: EntityKind,
    pub id: String,
}

fn resolve_children(
    session: &Session,
    view: &impl StoreView,
) -> Result<(Vec<Recording>, Vec<Note>), DanglingReference> {
    let recordings = session
        .recording_ids
        .iter()
        .map(|id| {
            view.recording(id).ok_or_else(|| DanglingReference {
                kind: EntityKind::Recording,
                id: id.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let notes = session
        .note_ids
        .iter()
        .map(|id| {
            view.note(id).ok_or_else(|| DanglingReference {
                kind: EntityKind::Note,
                id: id.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((recordings, notes))
}

/// Session status is computed from its children, never stored.
///
/// Children are ordered by their position in the session's id lists, which
/// is creation order. A failure only counts when it is the newest child of
/// its kind, so a retried recording or regenerated note clears the error.
pub fn derive_session_status(
    session: &Session,
    view: &impl StoreView,
) -> Result<SessionStatus, DanglingReference> {
    let (recordings, notes) = resolve_children(session, view)?;
    if recordings.is_empty() {
        return Ok(SessionStatus::Empty);
    }
    let newest_recording_failed = recordings
        .last()
        .is_some_and(|r| r.status == RecordingStatus::Failed);
    let newest_note_failed = notes.last().is_some_and(|n| n.status == NoteStatus::Failed);
    if newest_recording_failed || newest_note_failed {
        return Ok(SessionStatus::Error);
    }
    if notes.iter().any(|n| n.status.has_content()) {
        return Ok(SessionStatus::NoteReady);
    }
    if recordings.iter().any(|r| r.status == RecordingStatus::Transcribed) {
        return Ok(SessionStatus::Transcribed);
    }
    Ok(SessionStatus::HasAudio)
}

/// Total recorded audio in a session, in seconds.
pub fn session_audio_seconds(
    session: &Session,
    view: &impl StoreView,
) -> Result<f64, DanglingReference> {
    session.recording_ids.iter().try_fold(0.0, |acc, id| {
        view.recording(id)
            .map(|r| acc + r.duration_s)
            .ok_or_else(|| DanglingReference {
                kind: EntityKind::Recording,
                id: id.to_string(),
            })
    })
}
