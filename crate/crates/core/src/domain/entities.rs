use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ids::{FacilityId, NoteId, RecordingId, SessionId, TemplateId, TranscriptId, UserId};
use super::lifecycle::{NoteStatus, RecordingStatus};
use super::time::Timestamp;
use super::{Entity, EntityKind, InvariantViolation};
use crate::store::BlobRef;

/// Slack allowed between the last segment end and the recording duration.
pub const SEGMENT_END_SLACK_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub id: SessionId,
    pub owner_id: UserId,
    pub facility_id: Option<FacilityId>,
    pub created_at: Timestamp,
    pub recording_ids: Vec<RecordingId>,
    pub note_ids: Vec<NoteId>,
    pub archived: bool,
}

impl Session {
    pub fn new(owner_id: UserId, facility_id: Option<FacilityId>) -> Self {
        Self {
            id: SessionId::generate(),
            owner_id,
            facility_id,
            created_at: Timestamp::now(),
            recording_ids: Vec::new(),
            note_ids: Vec::new(),
            archived: false,
        }
    }
}

/// Container and codec of stored audio. Only PCM16 WAV is accepted today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaFormat {
    WavPcm16,
}

impl MediaFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::WavPcm16 => "wav_pcm16",
        }
    }

    pub fn mime_type(&self) -> &'static str {
        match self {
            Self::WavPcm16 => "audio/wav",
        }
    }
}

impl fmt::Display for MediaFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recording {
    pub id: RecordingId,
    pub session_id: SessionId,
    pub blob_ref: BlobRef,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub media_format: MediaFormat,
    pub status: RecordingStatus,
    /// Set once transcription succeeds.
    pub transcript_id: Option<TranscriptId>,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
    pub speaker_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    pub id: TranscriptId,
    pub recording_id: RecordingId,
    pub segments: Vec<Segment>,
    pub full_text: String,
    pub language_tag: String,
    pub asr_backend_id: String,
    pub asr_model_id: String,
    pub created_at: Timestamp,
}

impl Transcript {
    pub fn join_segments(segments: &[Segment]) -> String {
        segments
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Checks the segment ordering rules, including the bound against the
    /// source recording's duration.
    pub fn check_against_duration(&self, duration_s: f64) -> Result<(), InvariantViolation> {
        self.validate()?;
        if let Some(last) = self.segments.last() {
            if last.end_s > duration_s + SEGMENT_END_SLACK_S {
                return Err(InvariantViolation::new(format!(
                    "transcript ends at {}s, recording is {}s",
                    last.end_s, duration_s
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteSection {
    pub title: String,
    pub body: String,
}

impl NoteSection {
    pub fn new(title: impl Into<String>, body: impl Into<String>) -> Self {
        Self { title: title.into(), body: body.into() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: Self) -> Self {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Note {
    pub id: NoteId,
    pub session_id: SessionId,
    pub template_id: TemplateId,
    pub transcript_ids: Vec<TranscriptId>,
    pub sections: Vec<NoteSection>,
    pub llm_backend_id: String,
    pub llm_model_id: String,
    pub token_usage: TokenUsage,
    pub status: NoteStatus,
    pub created_at: Timestamp,
    pub edited_at: Option<Timestamp>,
    /// Failure message when status is `failed`.
    pub error: Option<String>,
}

impl Note {
    /// SHA-256 over the canonical JSON of the sections, hex encoded.
    pub fn content_digest(&self) -> String {
        crate::store::digest_hex(
            &serde_json::to_vec(&self.sections).expect("sections serialize"),
        )
    }

    /// Sections rendered as `## <title>` blocks, the shape clinicians paste
    /// into the health record.
    pub fn render_text(&self) -> String {
        crate::template::render_sections(&self.sections)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clinician,
    Admin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub id: UserId,
    pub display_name: String,
    pub role: Role,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Facility {
    pub id: FacilityId,
    pub name: String,
    pub region_tag: String,
}

fn ensure_unique<'a, T: Eq + std::hash::Hash + fmt::Display + 'a>(
    what: &str,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<(), InvariantViolation> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item) {
            return Err(InvariantViolation::new(format!("duplicate {what} {item}")));
        }
    }
    Ok(())
}

impl Entity for Session {
    const KIND: EntityKind = EntityKind::Session;
    type Id = SessionId;

    fn id(&self) -> &SessionId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        ensure_unique("recording id", &self.recording_ids)?;
        ensure_unique("note id", &self.note_ids)
    }
}

impl Entity for Recording {
    const KIND: EntityKind = EntityKind::Recording;
    type Id = RecordingId;

    fn id(&self) -> &RecordingId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(InvariantViolation::new("duration_s must be finite and >= 0"));
        }
        if self.sample_rate_hz == 0 {
            return Err(InvariantViolation::new("sample_rate_hz must be positive"));
        }
        if self.status == RecordingStatus::Transcribed && self.transcript_id.is_none() {
            return Err(InvariantViolation::new("transcribed recording without transcript"));
        }
        Ok(())
    }
}

impl Entity for Transcript {
    const KIND: EntityKind = EntityKind::Transcript;
    type Id = TranscriptId;

    fn id(&self) -> &TranscriptId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        let mut prev_start = f64::NEG_INFINITY;
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.start_s.is_finite() && seg.end_s.is_finite()) || seg.start_s < 0.0 {
                return Err(InvariantViolation::new(format!("segment {i} has invalid times")));
            }
            if seg.start_s < prev_start {
                return Err(InvariantViolation::new(format!("segment {i} starts before segment {}", i - 1)));
            }
            if seg.end_s < seg.start_s {
                return Err(InvariantViolation::new(format!("segment {i} ends before it starts")));
            }
            prev_start = seg.start_s;
        }
        if self.full_text != Transcript::join_segments(&self.segments) {
            return Err(InvariantViolation::new("full_text is not the space-joined segment text"));
        }
        Ok(())
    }
}

impl Entity for Note {
    const KIND: EntityKind = EntityKind::Note;
    type Id = NoteId;

    fn id(&self) -> &NoteId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.transcript_ids.is_empty() {
            return Err(InvariantViolation::new("note must reference at least one transcript"));
        }
        ensure_unique("transcript id", &self.transcript_ids)?;
        let titles: Vec<&String> = self.sections.iter().map(|s| &s.title).collect();
        ensure_unique("section title", titles)?;
        if matches!(self.status, NoteStatus::Draft | NoteStatus::Edited | NoteStatus::Finalized)
            && self.sections.is_empty()
        {
            return Err(InvariantViolation::new("generated note has no sections"));
        }
        if (self.status == NoteStatus::Edited) != self.edited_at.is_some()
            && self.status != NoteStatus::Finalized
        {
            return Err(InvariantViolation::new("edited_at must be set exactly when edited"));
        }
        Ok(())
    }
}

impl Entity for UserProfile {
    const KIND: EntityKind = EntityKind::User;
    type Id = UserId;

    fn id(&self) -> &UserId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.id.as_str().is_empty() || self.id.as_str().contains('/') {
            return Err(InvariantViolation::new("user id must be nonempty and contain no '/'"));
        }
        Ok(())
    }
}

impl Entity for Facility {
    const KIND: EntityKind = EntityKind::Facility;
    type Id = FacilityId;

    fn id(&self) -> &FacilityId {
        &self.id
    }

    fn validate(&self) -> Result<(), InvariantViolation> {
        if self.id.as_str().is_empty() {
            return Err(InvariantViolation::new("facility id must be nonempty"));
        }
        Ok(())
    }
}
