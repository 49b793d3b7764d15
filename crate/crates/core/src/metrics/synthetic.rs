//! Synthetic deployments for exercising the metrics at realistic scale.

use crate::domain::{
    FacilityId, MediaFormat, Note, NoteId, NoteSection, NoteStatus, Recording, RecordingId,
    RecordingStatus, Role, Session, SessionId, Timestamp, TokenUsage, TranscriptId, UserId,
    UserProfile,
};
use crate::store::{BlobRef, Snapshot, Store, StoreError};
use crate::template::{NoteTemplate, TemplateSection};

/// Builds a [`Snapshot`] directly, without audio or audit events.
#[derive(Debug, Default)]
pub struct SyntheticBuilder {
    snapshot: Snapshot,
}

impl SyntheticBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn user(&mut self, id: impl Into<UserId>) -> UserId {
        let profile = UserProfile {
            id: id.into(),
            display_name: "Synthetic".into(),
            role: Role::Clinician,
            created_at: Timestamp::from_millis(0),
        };
        let id = profile.id.clone();
        self.snapshot.users.push(profile);
        id
    }

    /// A session with one transcribed recording per entry of `audio_s`.
    pub fn session(
        &mut self,
        owner: &UserId,
        facility: Option<FacilityId>,
        created_at: Timestamp,
        audio_s: &[f64],
    ) -> SessionId {
        let mut session = Session::new(owner.clone(), facility);
        session.created_at = created_at;
        for (i, d) in audio_s.iter().enumerate() {
            let recording = Recording {
                id: RecordingId::generate(),
                session_id: session.id.clone(),
                blob_ref: BlobRef {
                    address: format!("{:064x}", i + 1),
                    size_bytes: 1,
                    media_format: MediaFormat::WavPcm16,
                },
                duration_s: *d,
                sample_rate_hz: 16_000,
                media_format: MediaFormat::WavPcm16,
                status: RecordingStatus::Transcribed,
                transcript_id: Some(TranscriptId::generate()),
                created_at,
            };
            session.recording_ids.push(recording.id.clone());
            self.snapshot.view.insert_recording(recording);
        }
        let id = session.id.clone();
        self.snapshot.sessions.push(session);
        id
    }

    /// A draft note on an existing session with the given usage.
    pub fn note(&mut self, session: &SessionId, usage: TokenUsage) -> NoteId {
        let s = self
            .snapshot
            .sessions
            .iter_mut()
            .find(|s| &s.id == session)
            .expect("session added first");
        let note = Note {
            id: NoteId::generate(),
            session_id: s.id.clone(),
            template_id: "synthetic".into(),
            transcript_ids: vec![TranscriptId::generate()],
            sections: vec![NoteSection::new("Note", "")],
            llm_backend_id: "synthetic".into(),
            llm_model_id: "synthetic".into(),
            token_usage: usage,
            status: NoteStatus::Draft,
            created_at: s.created_at,
            edited_at: None,
            error: None,
        };
        s.note_ids.push(note.id.clone());
        let id = note.id.clone();
        self.snapshot.view.insert_note(note);
        id
    }

    pub fn custom_template(&mut self, owner: &UserId, created_at: Timestamp) {
        let mut t = NoteTemplate::custom(owner.clone(), "Synthetic", "", vec![TemplateSection::new("Note", "")]);
        t.created_at = created_at;
        self.snapshot.templates.push(t);
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn build(self) -> Snapshot {
        self.snapshot
    }

    /// Writes every entity into `store`, one transaction per kind.
    pub fn save_into(&self, store: &Store) -> Result<(), StoreError> {
        let s = &self.snapshot;
        store.save_batch(&s.users)?;
        store.save_batch(&s.view.recordings.values().cloned().collect::<Vec<_>>())?;
        store.save_batch(&s.view.notes.values().cloned().collect::<Vec<_>>())?;
        store.save_batch(&s.templates)?;
        store.save_batch(&s.sessions)
    }
}
