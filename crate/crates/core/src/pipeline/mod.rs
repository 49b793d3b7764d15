//! Session workflow: uploads, transcription and generation jobs, edits and
//! finalization, each recorded in the audit log.
//!
//! Jobs are persisted before they are queued, so a restart can pick up
//! whatever was queued or running via [`Orchestrator::recover`].

mod error;
mod job;
mod worker;

use std::sync::Arc;

use serde_json::json;
use tokio::sync::{mpsc, watch, Mutex};

pub use error::ScribeError;
pub use job::{Job, JobKind, JobState};
pub use worker::WorkerPool;

use crate::asr::{AsrError, AsrGateway, VocabularyLexicon};
use crate::audio::{self, AudioError};
use crate::domain::{
    derive_session_status, session_audio_seconds, EntityKind, Facility, FacilityId, JobId,
    Lifecycle, Note, NoteEvent, NoteId, NoteSection, NoteStatus, Recording, RecordingEvent,
    RecordingId, RecordingStatus, Session, SessionId, SessionStatus, TemplateId, Timestamp,
    TokenUsage, Transcript, TranscriptId, UserId, UserProfile,
};
use crate::llm::{LlmError, LlmGateway};
use crate::store::Store;
use crate::template::{
    builtin_template, builtin_templates, is_builtin_id, render_prompt, validate_template,
    NoteTemplate, TemplateError, TemplateSection,
};

/// Audit action names.
pub mod actions {
    pub const USER_CREATED: &str = "user_created";
    pub const FACILITY_CREATED: &str = "facility_created";
    pub const SESSION_CREATED: &str = "session_created";
    pub const SESSION_ARCHIVED: &str = "session_archived";
    pub const RECORDING_UPLOADED: &str = "recording_uploaded";
    pub const TRANSCRIPTION_STARTED: &str = "transcription_started";
    pub const RECORDING_TRANSCRIBED: &str = "recording_transcribed";
    pub const RECORDING_FAILED: &str = "recording_failed";
    pub const TRANSCRIPT_CREATED: &str = "transcript_created";
    pub const NOTE_REQUESTED: &str = "note_requested";
    pub const NOTE_GENERATED: &str = "note_generated";
    pub const NOTE_FAILED: &str = "note_failed";
    pub const NOTE_EDITED: &str = "note_edited";
    pub const NOTE_FINALIZED: &str = "note_finalized";
    pub const TEMPLATE_CREATED: &str = "template_created";
    pub const JOB_ENQUEUED: &str = "job_enqueued";
    pub const JOB_DONE: &str = "job_done";
    pub const JOB_FAILED: &str = "job_failed";
}

pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub default_asr_backend: String,
    pub default_llm_backend: String,
    pub lexicon: VocabularyLexicon,
    pub transcription_workers: usize,
    pub generation_workers: usize,
}

impl OrchestratorConfig {
    pub fn new(default_asr_backend: impl Into<String>, default_llm_backend: impl Into<String>) -> Self {
        Self {
            default_asr_backend: default_asr_backend.into(),
            default_llm_backend: default_llm_backend.into(),
            lexicon: VocabularyLexicon::default(),
            transcription_workers: DEFAULT_WORKERS,
            generation_workers: DEFAULT_WORKERS,
        }
    }
}

/// Options for a note request.
#[derive(Debug, Clone)]
pub struct NoteRequest {
    pub template_id: TemplateId,
    /// Empty means every transcribed recording in the session.
    pub transcript_ids: Vec<TranscriptId>,
    pub encounter_context: Option<String>,
    pub llm_backend: Option<String>,
}

impl NoteRequest {
    pub fn new(template_id: TemplateId) -> Self {
        Self { template_id, transcript_ids: Vec::new(), encounter_context: None, llm_backend: None }
    }
}

/// A session with its children resolved.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SessionDetail {
    pub session: Session,
    pub status: SessionStatus,
    pub audio_seconds: f64,
    pub recordings: Vec<Recording>,
    pub notes: Vec<Note>,
}

pub(crate) struct Queue {
    tx: mpsc::UnboundedSender<JobId>,
    rx: Arc<Mutex<mpsc::UnboundedReceiver<JobId>>>,
}

impl Queue {
    fn new() -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        Self { tx, rx: Arc::new(Mutex::new(rx)) }
    }
}

pub struct Orchestrator {
    store: Arc<Store>,
    asr: Arc<AsrGateway>,
    llm: Arc<LlmGateway>,
    config: OrchestratorConfig,
    transcription: Queue,
    generation: Queue,
    finished: watch::Sender<u64>,
}

fn invalid_media(err: AudioError) -> ScribeError {
    match err {
        AudioError::Empty => ScribeError::EmptyAudio,
        AudioError::Unsupported(why) => ScribeError::UnsupportedMedia(why),
    }
}

const WAV_MIME_TYPES: [&str; 4] = ["audio/wav", "audio/x-wav", "audio/wave", "audio/vnd.wave"];

impl Orchestrator {
    pub fn new(
        store: Arc<Store>,
        asr: Arc<AsrGateway>,
        llm: Arc<LlmGateway>,
        config: OrchestratorConfig,
    ) -> Result<Self, ScribeError> {
        if asr.descriptor(&config.default_asr_backend).is_none() {
            return Err(AsrError::UnknownBackend(config.default_asr_backend.clone()).into());
        }
        if llm.descriptor(&config.default_llm_backend).is_none() {
            return Err(LlmError::UnknownBackend(config.default_llm_backend.clone()).into());
        }
        Ok(Self {
            store,
            asr,
            llm,
            config,
            transcription: Queue::new(),
            generation: Queue::new(),
            finished: watch::channel(0).0,
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn asr(&self) -> &Arc<AsrGateway> {
        &self.asr
    }

    pub fn llm(&self) -> &Arc<LlmGateway> {
        &self.llm
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    fn audit(
        &self,
        actor: &str,
        action: &str,
        kind: EntityKind,
        id: &impl ToString,
        payload: serde_json::Value,
    ) -> Result<(), ScribeError> {
        self.store.append_audit(actor, action, kind, &id.to_string(), payload)?;
        Ok(())
    }

    // ---- users and facilities ----

    /// Saves the profile unless a user with this id already exists.
    pub fn ensure_user(&self, profile: UserProfile) -> Result<UserProfile, ScribeError> {
        if let Some(existing) = self.store.try_load::<UserProfile>(&profile.id)? {
            return Ok(existing);
        }
        self.store.save(&profile)?;
        self.audit(
            profile.id.as_str(),
            actions::USER_CREATED,
            EntityKind::User,
            &profile.id,
            json!({ "role": profile.role }),
        )?;
        Ok(profile)
    }

    pub fn ensure_facility(&self, actor: &str, facility: Facility) -> Result<Facility, ScribeError> {
        if let Some(existing) = self.store.try_load::<Facility>(&facility.id)? {
            return Ok(existing);
        }
        self.store.save(&facility)?;
        self.audit(
            actor,
            actions::FACILITY_CREATED,
            EntityKind::Facility,
            &facility.id,
            json!({ "region_tag": facility.region_tag }),
        )?;
        Ok(facility)
    }

    // ---- sessions ----

    pub fn create_session(
        &self,
        owner: &UserId,
        facility: Option<FacilityId>,
    ) -> Result<Session, ScribeError> {
        if !self.store.exists::<UserProfile>(owner)? {
            return Err(ScribeError::UnknownUser(owner.clone()));
        }
        if let Some(f) = &facility {
            if !self.store.exists::<Facility>(f)? {
                return Err(ScribeError::UnknownFacility(f.to_string()));
            }
        }
        let session = Session::new(owner.clone(), facility);
        self.store.save(&session)?;
        self.audit(
            owner.as_str(),
            actions::SESSION_CREATED,
            EntityKind::Session,
            &session.id,
            json!({ "owner_id": session.owner_id, "facility_id": session.facility_id }),
        )?;
        Ok(session)
    }

    pub fn archive_session(&self, actor: &str, id: &SessionId) -> Result<Session, ScribeError> {
        let (session, changed) = self.store.update::<Session, _, ScribeError>(id, |s| {
            let changed = !s.archived;
            s.archived = true;
            Ok(changed)
        })?;
        if changed {
            self.audit(actor, actions::SESSION_ARCHIVED, EntityKind::Session, id, json!({ "archived": true }))?;
        }
        Ok(session)
    }

    pub fn session_detail(&self, id: &SessionId) -> Result<SessionDetail, ScribeError> {
        let session: Session = self.store.load(id)?;
        let status = derive_session_status(&session, self.store.as_ref())?;
        let audio_seconds = session_audio_seconds(&session, self.store.as_ref())?;
        let recordings = session
            .recording_ids
            .iter()
            .map(|r| self.store.load(r))
            .collect::<Result<_, _>>()?;
        let notes = session.note_ids.iter().map(|n| self.store.load(n)).collect::<Result<_, _>>()?;
        Ok(SessionDetail { session, status, audio_seconds, recordings, notes })
    }

    // ---- recordings ----

    /// Stores the audio, creates an `uploaded` recording and queues its
    /// transcription. `declared_mime`, when given, must name WAV.
    pub fn attach_recording(
        &self,
        actor: &str,
        session_id: &SessionId,
        bytes: &[u8],
        declared_mime: Option<&str>,
    ) -> Result<(Recording, Job), ScribeError> {
        let session: Session = self.store.load(session_id)?;
        if session.archived {
            return Err(ScribeError::SessionArchived(session_id.clone()));
        }
        if let Some(mime) = declared_mime {
            let base = mime.split(';').next().unwrap_or_default().trim().to_ascii_lowercase();
            if !WAV_MIME_TYPES.contains(&base.as_str()) && base != "application/octet-stream" {
                return Err(ScribeError::UnsupportedMedia(format!("media type `{base}`")));
            }
        }
        let info = audio::probe(bytes).map_err(invalid_media)?;
        let blob_ref = self.store.put_blob(bytes, info.media_format)?;
        let recording = Recording {
            id: RecordingId::generate(),
            session_id: session_id.clone(),
            blob_ref,
            duration_s: info.duration_s,
            sample_rate_hz: info.sample_rate_hz,
            media_format: info.media_format,
            status: RecordingStatus::Uploaded,
            transcript_id: None,
            created_at: Timestamp::now(),
        };
        self.store.save(&recording)?;
        self.store.update::<Session, _, ScribeError>(session_id, |s| {
            if s.archived {
                return Err(ScribeError::SessionArchived(s.id.clone()));
            }
            s.recording_ids.push(recording.id.clone());
            Ok(())
        })?;
        self.audit(
            actor,
            actions::RECORDING_UPLOADED,
            EntityKind::Recording,
            &recording.id,
            json!({
                "session_id": session_id,
                "status": recording.status,
                "blob_address": recording.blob_ref.address,
                "duration_s": recording.duration_s,
            }),
        )?;
        let job = Job::new(
            JobKind::Transcription,
            recording.id.as_str(),
            &self.config.default_asr_backend,
            actor,
            self.asr.retry_policy().max_attempts(),
        );
        self.enqueue(job.clone())?;
        Ok((recording, job))
    }

    fn enqueue(&self, job: Job) -> Result<(), ScribeError> {
        self.store.save(&job)?;
        self.audit(
            &job.actor_id,
            actions::JOB_ENQUEUED,
            EntityKind::Job,
            &job.id,
            json!({ "kind": job.kind, "subject_id": job.subject_id, "backend_id": job.backend_id }),
        )?;
        self.push(&job);
        Ok(())
    }

    fn push(&self, job: &Job) {
        let queue = match job.kind {
            JobKind::Transcription => &self.transcription,
            JobKind::Generation => &self.generation,
        };
        // The receiver lives as long as the orchestrator, so this only fails
        // during teardown.
        let _ = queue.tx.send(job.id.clone());
    }

    /// Marks the job running if it is still queued.
    fn claim(&self, id: &JobId, kind: JobKind) -> Result<Job, ScribeError> {
        let (job, prior) = self.store.update::<Job, _, ScribeError>(id, |job| {
            let prior = job.state;
            if job.kind == kind && prior == JobState::Queued {
                job.state = JobState::Running;
            }
            Ok(prior)
        })?;
        if job.kind != kind || prior != JobState::Queued {
            return Err(ScribeError::NotFound {
                kind: format!("queued {kind:?} job").to_lowercase(),
                id: id.to_string(),
            });
        }
        Ok(job)
    }

    fn finish(&self, job: &Job, attempts: u32, error: Option<String>) -> Result<(), ScribeError> {
        let attempts = attempts.clamp(1, job.max_attempts);
        let (job, _) = self.store.update::<Job, _, ScribeError>(&job.id, |j| {
            j.attempt = attempts;
            j.state = if error.is_some() { JobState::Failed } else { JobState::Done };
            j.finished_at = Some(Timestamp::now());
            j.error = error.clone();
            Ok(())
        })?;
        let (action, payload) = match &error {
            None => (
                actions::JOB_DONE,
                json!({ "kind": job.kind, "subject_id": job.subject_id, "backend_id": job.backend_id, "attempts": attempts }),
            ),
            Some(e) => (
                actions::JOB_FAILED,
                json!({ "kind": job.kind, "subject_id": job.subject_id, "backend_id": job.backend_id, "attempts": attempts, "error": e }),
            ),
        };
        self.audit(&job.actor_id, action, EntityKind::Job, &job.id, payload)
    }

    fn notify(&self) {
        self.finished.send_modify(|n| *n += 1);
    }

    /// Runs one queued transcription job to completion.
    pub async fn run_transcription(&self, job_id: &JobId) -> Result<Transcript, ScribeError> {
        let job = self.claim(job_id, JobKind::Transcription)?;
        let recording_id = RecordingId::from(job.subject_id.clone());
        let mut attempts = 0;
        let outcome = self.transcribe_claimed(&job, &recording_id, &mut attempts).await;
        let finished = match &outcome {
            Ok(_) => self.finish(&job, attempts, None),
            Err(e) => {
                if let Err(mark) = self.mark_recording_failed(&job, &recording_id, e) {
                    tracing::error!(recording = %recording_id, error = %mark, "could not mark recording failed");
                }
                self.finish(&job, attempts, Some(e.to_string()))
            }
        };
        self.notify();
        finished?;
        outcome
    }

    async fn transcribe_claimed(
        &self,
        job: &Job,
        recording_id: &RecordingId,
        attempts: &mut u32,
    ) -> Result<Transcript, ScribeError> {
        let (recording, started) = self.store.update::<Recording, _, ScribeError>(recording_id, |r| {
            // A recovered job finds its recording already transcribing.
            if r.status == RecordingStatus::Transcribing {
                return Ok(false);
            }
            r.status = r.status.next(RecordingEvent::TranscriptionStarted)?;
            Ok(true)
        })?;
        if started {
            self.audit(
                &job.actor_id,
                actions::TRANSCRIPTION_STARTED,
                EntityKind::Recording,
                recording_id,
                json!({ "status": recording.status, "job_id": job.id }),
            )?;
        }
        let audio = self.store.get_blob(&recording.blob_ref.address)?;
        let transcribed = self
            .asr
            .transcribe(&recording, &audio, &job.backend_id, &self.config.lexicon)
            .await
            .map_err(|f| {
                *attempts = f.attempts;
                ScribeError::Asr(f.error)
            })?;
        *attempts = transcribed.attempts;
        let transcript = transcribed.transcript;
        transcript.check_against_duration(recording.duration_s)?;
        self.store.save(&transcript)?;
        self.audit(
            &job.actor_id,
            actions::TRANSCRIPT_CREATED,
            EntityKind::Transcript,
            &transcript.id,
            json!({
                "recording_id": recording_id,
                "segments": transcript.segments.len(),
                "asr_backend_id": transcript.asr_backend_id,
                "asr_model_id": transcript.asr_model_id,
            }),
        )?;
        let (recording, _) = self.store.update::<Recording, _, ScribeError>(recording_id, |r| {
            r.status = r.status.next(RecordingEvent::TranscriptionSucceeded)?;
            r.transcript_id = Some(transcript.id.clone());
            Ok(())
        })?;
        self.audit(
            &job.actor_id,
            actions::RECORDING_TRANSCRIBED,
            EntityKind::Recording,
            recording_id,
            json!({ "status": recording.status, "transcript_id": transcript.id, "attempts": *attempts }),
        )?;
        Ok(transcript)
    }

    fn mark_recording_failed(
        &self,
        job: &Job,
        recording_id: &RecordingId,
        cause: &ScribeError,
    ) -> Result<(), ScribeError> {
        let (recording, changed) = self.store.update::<Recording, _, ScribeError>(recording_id, |r| {
            if r.status != RecordingStatus::Transcribing {
                return Ok(false);
            }
            r.status = r.status.next(RecordingEvent::TranscriptionFailed)?;
            Ok(true)
        })?;
        if changed {
            self.audit(
                &job.actor_id,
                actions::RECORDING_FAILED,
                EntityKind::Recording,
                recording_id,
                json!({ "status": recording.status, "error": cause.to_string() }),
            )?;
        }
        Ok(())
    }

    // ---- templates ----

    pub fn resolve_template(&self, id: &TemplateId) -> Result<NoteTemplate, ScribeError> {
        match builtin_template(id) {
            Some(t) => Ok(t),
            None => Ok(self.store.load(id)?),
        }
    }

    /// Builtins plus the custom templates `user` may use; admins see all.
    pub fn list_templates(&self, user: &UserProfile) -> Result<Vec<NoteTemplate>, ScribeError> {
        let mut out = builtin_templates();
        let mut custom: Vec<NoteTemplate> = self
            .store
            .list::<NoteTemplate>()?
            .into_iter()
            .filter(|t| user.role == crate::domain::Role::Admin || t.owner_id.as_ref() == Some(&user.id))
            .collect();
        custom.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        out.extend(custom);
        Ok(out)
    }

    pub fn create_template(
        &self,
        owner: &UserId,
        name: &str,
        preamble: &str,
        sections: Vec<TemplateSection>,
    ) -> Result<NoteTemplate, ScribeError> {
        if !self.store.exists::<UserProfile>(owner)? {
            return Err(ScribeError::UnknownUser(owner.clone()));
        }
        let template = NoteTemplate::custom(owner.clone(), name, preamble, sections);
        let violations = validate_template(&template);
        if !violations.is_empty() {
            return Err(ScribeError::TemplateInvalid(violations));
        }
        debug_assert!(!is_builtin_id(&template.id));
        self.store.save(&template)?;
        self.audit(
            owner.as_str(),
            actions::TEMPLATE_CREATED,
            EntityKind::Template,
            &template.id,
            json!({ "name": template.name, "sections": template.section_titles() }),
        )?;
        Ok(template)
    }

    // ---- notes ----

    /// Creates a `generating` note and its job without running it.
    fn prepare_note(
        &self,
        actor: &str,
        session_id: &SessionId,
        request: &NoteRequest,
    ) -> Result<(Note, Job), ScribeError> {
        let session: Session = self.store.load(session_id)?;
        if session.archived {
            return Err(ScribeError::SessionArchived(session_id.clone()));
        }
        let backend_id = request
            .llm_backend
            .clone()
            .unwrap_or_else(|| self.config.default_llm_backend.clone());
        let descriptor = self
            .llm
            .descriptor(&backend_id)
            .ok_or_else(|| LlmError::UnknownBackend(backend_id.clone()))?;
        self.resolve_template(&request.template_id)?;

        // Transcripts are used in recording order, whatever order was asked.
        let mut chosen = Vec::new();
        for rid in &session.recording_ids {
            let recording: Recording = self.store.load(rid)?;
            let Some(tid) = recording.transcript_id.filter(|_| recording.status == RecordingStatus::Transcribed)
            else {
                continue;
            };
            if request.transcript_ids.is_empty() || request.transcript_ids.contains(&tid) {
                chosen.push(tid);
            }
        }
        if let Some(missing) = request.transcript_ids.iter().find(|t| !chosen.contains(t)) {
            return Err(ScribeError::TranscriptNotReady(format!(
                "transcript {missing} is not a finished transcript of session {session_id}"
            )));
        }
        if chosen.is_empty() {
            return Err(ScribeError::TranscriptNotReady(format!(
                "session {session_id} has no transcribed recordings"
            )));
        }

        let note = Note {
            id: NoteId::generate(),
            session_id: session_id.clone(),
            template_id: request.template_id.clone(),
            transcript_ids: chosen,
            sections: Vec::new(),
            llm_backend_id: backend_id.clone(),
            llm_model_id: descriptor.model_id.clone(),
            token_usage: TokenUsage::default(),
            status: NoteStatus::Generating,
            created_at: Timestamp::now(),
            edited_at: None,
            error: None,
        };
        self.store.save(&note)?;
        self.store.update::<Session, _, ScribeError>(session_id, |s| {
            if s.archived {
                return Err(ScribeError::SessionArchived(s.id.clone()));
            }
            s.note_ids.push(note.id.clone());
            Ok(())
        })?;
        self.audit(
            actor,
            actions::NOTE_REQUESTED,
            EntityKind::Session,
            session_id,
            json!({ "note_id": note.id, "status": note.status, "template_id": note.template_id }),
        )?;
        let mut job = Job::new(
            JobKind::Generation,
            note.id.as_str(),
            backend_id,
            actor,
            // Each of the two prompts (original and repair) may retry.
            2 * self.llm.retry_policy().max_attempts(),
        );
        job.context = request.encounter_context.clone();
        Ok((note, job))
    }

    /// Queues note generation for the worker pool.
    pub fn submit_note(
        &self,
        actor: &str,
        session_id: &SessionId,
        request: &NoteRequest,
    ) -> Result<(Note, Job), ScribeError> {
        let (note, job) = self.prepare_note(actor, session_id, request)?;
        self.enqueue(job.clone())?;
        Ok((note, job))
    }

    /// Generates a note inline and returns the draft.
    pub async fn generate_note(
        &self,
        actor: &str,
        session_id: &SessionId,
        request: &NoteRequest,
    ) -> Result<Note, ScribeError> {
        let (_, job) = self.prepare_note(actor, session_id, request)?;
        self.store.save(&job)?;
        self.audit(
            actor,
            actions::JOB_ENQUEUED,
            EntityKind::Job,
            &job.id,
            json!({ "kind": job.kind, "subject_id": job.subject_id, "backend_id": job.backend_id }),
        )?;
        self.run_generation(&job.id).await
    }

    /// Runs one queued generation job to completion.
    pub async fn run_generation(&self, job_id: &JobId) -> Result<Note, ScribeError> {
        let job = self.claim(job_id, JobKind::Generation)?;
        let note_id = NoteId::from(job.subject_id.clone());
        let mut attempts = 0;
        let outcome = self.generate_claimed(&job, &note_id, &mut attempts).await;
        let finished = match &outcome {
            Ok(_) => self.finish(&job, attempts, None),
            Err(e) => {
                if let Err(mark) = self.mark_note_failed(&job, &note_id, e) {
                    tracing::error!(note = %note_id, error = %mark, "could not mark note failed");
                }
                self.finish(&job, attempts, Some(e.to_string()))
            }
        };
        self.notify();
        finished?;
        outcome
    }

    async fn generate_claimed(&self, job: &Job, note_id: &NoteId, attempts: &mut u32) -> Result<Note, ScribeError> {
        let note: Note = self.store.load(note_id)?;
        if note.status != NoteStatus::Generating {
            return Err(note.status.next(NoteEvent::GenerationSucceeded).unwrap_err().into());
        }
        let template = self.resolve_template(&note.template_id)?;
        let transcripts = note
            .transcript_ids
            .iter()
            .map(|t| self.store.load::<Transcript>(t))
            .collect::<Result<Vec<_>, _>>()?;
        let bundle = render_prompt(&template, &transcripts, job.context.as_deref()).map_err(|e| match e {
            TemplateError::EmptyTranscript => ScribeError::EmptyTranscript,
            TemplateError::MalformedOutput(m) => ScribeError::Llm(LlmError::MalformedOutput(m)),
        })?;
        let generated = self.llm.generate(&bundle, &job.backend_id).await.map_err(|f| {
            *attempts = f.attempts;
            ScribeError::Llm(f.error)
        })?;
        *attempts = generated.attempts;
        let result = generated.result;
        let (note, _) = self.store.update::<Note, _, ScribeError>(note_id, |n| {
            n.status = n.status.next(NoteEvent::GenerationSucceeded)?;
            n.sections = result.parsed_sections.clone();
            n.token_usage = result.token_usage;
            Ok(())
        })?;
        self.audit(
            &job.actor_id,
            actions::NOTE_GENERATED,
            EntityKind::Note,
            note_id,
            json!({
                "status": note.status,
                "template_id": note.template_id,
                "transcript_ids": note.transcript_ids,
                "llm_backend_id": note.llm_backend_id,
                "llm_model_id": note.llm_model_id,
                "token_usage": note.token_usage,
                "attempts": *attempts,
                "repaired": generated.repaired,
                "latency_ms": result.latency_ms,
                "content_digest": note.content_digest(),
            }),
        )?;
        Ok(note)
    }

    fn mark_note_failed(&self, job: &Job, note_id: &NoteId, cause: &ScribeError) -> Result<(), ScribeError> {
        let (note, changed) = self.store.update::<Note, _, ScribeError>(note_id, |n| {
            if n.status != NoteStatus::Generating {
                return Ok(false);
            }
            n.status = n.status.next(NoteEvent::GenerationFailed)?;
            n.error = Some(cause.to_string());
            Ok(true)
        })?;
        if changed {
            self.audit(
                &job.actor_id,
                actions::NOTE_FAILED,
                EntityKind::Note,
                note_id,
                json!({ "status": note.status, "error": cause.to_string() }),
            )?;
        }
        Ok(())
    }

    /// Replaces section bodies. Titles must match the note's, in order.
    ///
    /// `expected_digest`, when given, must equal the note's current
    /// [`Note::content_digest`]; otherwise the edit is rejected as a
    /// concurrent modification.
    pub fn edit_note(
        &self,
        actor: &str,
        note_id: &NoteId,
        sections: Vec<NoteSection>,
        expected_digest: Option<&str>,
    ) -> Result<Note, ScribeError> {
        let (note, previous) = self.store.update::<Note, _, ScribeError>(note_id, |n| {
            let next = n.status.next(NoteEvent::Edit)?;
            let have: Vec<&str> = n.sections.iter().map(|s| s.title.as_str()).collect();
            let want: Vec<&str> = sections.iter().map(|s| s.title.as_str()).collect();
            if have != want {
                return Err(ScribeError::SectionMismatch(format!("expected {have:?}, got {want:?}")));
            }
            let previous = n.content_digest();
            if expected_digest.is_some_and(|d| d != previous) {
                return Err(ScribeError::VersionConflict);
            }
            n.status = next;
            n.sections = sections;
            n.edited_at = Some(Timestamp::now());
            Ok(previous)
        })?;
        self.audit(
            actor,
            actions::NOTE_EDITED,
            EntityKind::Note,
            note_id,
            json!({
                "status": note.status,
                "previous_digest": previous,
                "content_digest": note.content_digest(),
            }),
        )?;
        Ok(note)
    }

    pub fn finalize_note(&self, actor: &str, note_id: &NoteId) -> Result<Note, ScribeError> {
        let (note, _) = self.store.update::<Note, _, ScribeError>(note_id, |n| {
            n.status = n.status.next(NoteEvent::Finalize)?;
            Ok(())
        })?;
        self.audit(
            actor,
            actions::NOTE_FINALIZED,
            EntityKind::Note,
            note_id,
            json!({ "status": note.status, "content_digest": note.content_digest() }),
        )?;
        Ok(note)
    }

    // ---- jobs ----

    /// Re-queues jobs a previous process left queued or running. Call
    /// before starting workers.
    pub fn recover(&self) -> Result<usize, ScribeError> {
        let mut pending: Vec<Job> = self
            .store
            .jobs()?
            .into_iter()
            .filter(|j| !j.state.is_finished())
            .collect();
        pending.sort_by(|a, b| (a.enqueued_at, &a.id).cmp(&(b.enqueued_at, &b.id)));
        for job in &pending {
            if job.state == JobState::Running {
                self.store.update::<Job, _, ScribeError>(&job.id, |j| {
                    j.state = JobState::Queued;
                    Ok(())
                })?;
            }
            self.push(job);
        }
        Ok(pending.len())
    }

    /// Resolves once the job is done or failed.
    pub async fn wait_for_job(&self, id: &JobId) -> Result<Job, ScribeError> {
        let mut rx = self.finished.subscribe();
        loop {
            let job: Job = self.store.load(id)?;
            if job.state.is_finished() {
                return Ok(job);
            }
            if rx.changed().await.is_err() {
                return Ok(job);
            }
        }
    }

    /// Spawns the transcription and generation workers.
    pub fn start(self: &Arc<Self>) -> WorkerPool {
        WorkerPool::spawn(self)
    }

    async fn run_job(&self, kind: JobKind, id: JobId) {
        let result = match kind {
            JobKind::Transcription => self.run_transcription(&id).await.map(drop),
            JobKind::Generation => self.run_generation(&id).await.map(drop),
        };
        if let Err(e) = result {
            tracing::warn!(job = %id, ?kind, error = %e, "job did not succeed");
        }
    }
}
