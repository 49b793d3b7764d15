//! Uniform transcription over interchangeable speech-to-text backends.

mod backends;
mod lexicon;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::domain::{Recording, Segment, Timestamp, Transcript, TranscriptId, SEGMENT_END_SLACK_S};
use crate::health::{BackendHealth, HealthStatus};
use crate::retry::{RetryPolicy, Retryable};

pub use lexicon::{apply_lexicon, LexiconEntry, LexiconError, VocabularyLexicon};

pub const DEFAULT_ASR_CONCURRENCY: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsrBackendKind {
    /// Reads `<fixture_dir>/<sha256 of audio>.txt`.
    Mock,
    /// OpenAI-style `POST /v1/audio/transcriptions` multipart endpoint.
    HttpTranscription,
    /// Runs `<command> <input.wav> <output.json> <model_id>`.
    LocalEngine,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_language() -> String {
    "en".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrBackendDescriptor {
    pub backend_id: String,
    pub kind: AsrBackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_language")]
    pub language: String,
    /// Mock only: directory of sidecar transcripts.
    #[serde(default)]
    pub fixture_dir: Option<PathBuf>,
    /// Mock only: text used when no sidecar exists.
    #[serde(default)]
    pub fallback_text: Option<String>,
    /// Local engine only.
    #[serde(default)]
    pub command: Option<PathBuf>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
}

impl AsrBackendDescriptor {
    pub fn mock(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind: AsrBackendKind::Mock,
            endpoint: None,
            model_id: "mock-asr".into(),
            timeout_s: default_timeout(),
            language: default_language(),
            fixture_dir: None,
            fallback_text: None,
            command: None,
            api_key: None,
            max_concurrency: None,
        }
    }

    pub fn http(backend_id: impl Into<String>, endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            kind: AsrBackendKind::HttpTranscription,
            endpoint: Some(endpoint.into()),
            model_id: model_id.into(),
            ..Self::mock(backend_id)
        }
    }

    pub fn validate(&self) -> Result<(), AsrError> {
        let bad = |msg: &str| Err(AsrError::InvalidDescriptor(format!("{}: {msg}", self.backend_id)));
        if self.backend_id.trim().is_empty() {
            return bad("backend_id must not be empty");
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return bad("timeout_s must be positive");
        }
        let needs_endpoint = self.kind == AsrBackendKind::HttpTranscription;
        if needs_endpoint != self.endpoint.is_some() {
            return bad("endpoint is required for http_transcription and only there");
        }
        if (self.kind == AsrBackendKind::LocalEngine) != self.command.is_some() {
            return bad("command is required for local_engine and only there");
        }
        if self.max_concurrency == Some(0) {
            return bad("max_concurrency must be positive");
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsrError {
    #[error("audio is empty")]
    EmptyAudio,
    #[error("transcription backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("transcription backend rejected the request: {0}")]
    BackendRejected(String),
    #[error("unknown transcription backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid transcription backend: {0}")]
    InvalidDescriptor(String),
}

impl Retryable for AsrError {
    fn is_retryable(&self) -> bool {
        matches!(self, Self::BackendUnavailable(_))
    }
}

/// What a backend returned before normalization.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct RawTranscription {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub segments: Vec<RawSegment>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct RawSegment {
    pub start: f64,
    pub end: f64,
    pub text: String,
    #[serde(default)]
    pub speaker: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcribed {
    pub transcript: Transcript,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{error} (after {attempts} attempt(s))")]
pub struct AsrFailure {
    pub error: AsrError,
    pub attempts: u32,
}

/// Turns backend output into segments that satisfy the transcript rules:
/// starts non-decreasing, each end at or after its start, nothing past the
/// recording end plus slack, whitespace collapsed, empty segments dropped.
pub fn normalize_segments(raw: &RawTranscription, duration_s: f64) -> Vec<Segment> {
    let limit = duration_s.max(0.0) + SEGMENT_END_SLACK_S;
    let clean = |t: &str| t.split_whitespace().collect::<Vec<_>>().join(" ");
    let finite_or = |x: f64, d: f64| if x.is_finite() { x } else { d };
    if raw.segments.is_empty() {
        let text = clean(&raw.text);
        if text.is_empty() {
            return Vec::new();
        }
        return vec![Segment { start_s: 0.0, end_s: duration_s.max(0.0), text, speaker_label: None }];
    }
    let mut segments: Vec<Segment> = raw
        .segments
        .iter()
        .filter_map(|s| {
            let text = clean(&s.text);
            if text.is_empty() {
                return None;
            }
            let start_s = finite_or(s.start, 0.0).clamp(0.0, limit);
            let end_s = finite_or(s.end, start_s).clamp(start_s, limit);
            Some(Segment { start_s, end_s, text, speaker_label: s.speaker.clone() })
        })
        .collect();
    segments.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    segments
}

struct Backend {
    descriptor: AsrBackendDescriptor,
    permits: Arc<Semaphore>,
}

/// Registry of configured speech-to-text backends.
pub struct AsrGateway {
    backends: HashMap<String, Backend>,
    order: Vec<String>,
    client: reqwest::Client,
    retry: RetryPolicy,
}

impl AsrGateway {
    pub fn new(descriptors: Vec<AsrBackendDescriptor>, retry: RetryPolicy) -> Result<Self, AsrError> {
        let mut backends = HashMap::new();
        let mut order = Vec::new();
        for d in descriptors {
            d.validate()?;
            if backends.contains_key(&d.backend_id) {
                return Err(AsrError::InvalidDescriptor(format!("duplicate backend_id `{}`", d.backend_id)));
            }
            let permits = Arc::new(Semaphore::new(d.max_concurrency.unwrap_or(DEFAULT_ASR_CONCURRENCY)));
            order.push(d.backend_id.clone());
            backends.insert(d.backend_id.clone(), Backend { descriptor: d, permits });
        }
        Ok(Self { backends, order, client: reqwest::Client::new(), retry })
    }

    pub fn descriptor(&self, backend_id: &str) -> Option<&AsrBackendDescriptor> {
        self.backends.get(backend_id).map(|b| &b.descriptor)
    }

    pub fn backend_ids(&self) -> &[String] {
        &self.order
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    /// Transcribes one recording, retrying transient failures, then applies
    /// the lexicon.
    pub async fn transcribe(
        &self,
        recording: &Recording,
        audio: &[u8],
        backend_id: &str,
        lexicon: &VocabularyLexicon,
    ) -> Result<Transcribed, AsrFailure> {
        let fail = |error| AsrFailure { error, attempts: 0 };
        let backend = self
            .backends
            .get(backend_id)
            .ok_or_else(|| fail(AsrError::UnknownBackend(backend_id.to_owned())))?;
        if audio.is_empty() || recording.duration_s <= 0.0 {
            return Err(fail(AsrError::EmptyAudio));
        }
        let descriptor = &backend.descriptor;
        let (outcome, attempts) = self
            .retry
            .run(|attempt| async move {
                let _permit = backend.permits.acquire().await.expect("semaphore never closed");
                tracing::debug!(backend = %descriptor.backend_id, attempt, "transcription attempt");
                backends::call(&self.client, descriptor, recording, audio).await
            })
            .await;
        let raw = outcome.map_err(|error| AsrFailure { error, attempts })?;
        let segments = normalize_segments(&raw, recording.duration_s);
        let transcript = Transcript {
            id: TranscriptId::generate(),
            recording_id: recording.id.clone(),
            full_text: Transcript::join_segments(&segments),
            segments,
            language_tag: raw.language.unwrap_or_else(|| descriptor.language.clone()),
            asr_backend_id: descriptor.backend_id.clone(),
            asr_model_id: descriptor.model_id.clone(),
            created_at: Timestamp::now(),
        };
        Ok(Transcribed { transcript: apply_lexicon(&transcript, lexicon), attempts })
    }

    pub async fn health_check(&self, backend_id: &str) -> HealthStatus {
        match self.backends.get(backend_id) {
            Some(b) => backends::probe(&self.client, &b.descriptor).await,
            None => HealthStatus::unhealthy(format!("unknown backend `{backend_id}`")),
        }
    }

    pub async fn health(&self) -> Vec<BackendHealth> {
        let mut out = Vec::with_capacity(self.order.len());
        for id in &self.order {
            out.push(BackendHealth { backend_id: id.clone(), status: self.health_check(id).await });
        }
        out
    }
}
