//! Chat-completion note generation over interchangeable model backends.

mod backends;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::domain::{NoteSection, TemplateId, TokenUsage, TranscriptId};
use crate::health::{BackendHealth, HealthStatus};
use crate::retry::{RetryPolicy, Retryable};
use crate::template::{parse_sections, TemplateError, OUTPUT_CONTRACT};

pub use backends::mock_completion;

pub const DEFAULT_LLM_CONCURRENCY: usize = 8;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1500;

/// Deterministic, model-agnostic token estimate: `ceil(bytes / 4)`.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

/// Everything needed to ask a model for one note.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub template_id: TemplateId,
    pub transcript_ids: Vec<TranscriptId>,
    /// Titles the output must contain, in order.
    pub section_titles: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmBackendKind {
    /// Emits each requested heading followed by the first ten transcript words.
    Mock,
    /// Chat-completions JSON over HTTP (`POST /v1/chat/completions`).
    HttpChat,
}

fn default_max_output_tokens() -> u32 {
    DEFAULT_MAX_OUTPUT_TOKENS
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

fn default_timeout() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmBackendDescriptor {
    pub backend_id: String,
    pub kind: LlmBackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_id: String,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default)]
    pub api_key: Option<String>,
    /// Prompt plus output budget may not exceed this many tokens.
    #[serde(default)]
    pub context_window_tokens: Option<u64>,
    #[serde(default)]
    pub max_concurrency: Option<usize>,
}

impl LlmBackendDescriptor {
    pub fn mock(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind: LlmBackendKind::Mock,
            endpoint: None,
            model_id: "mock-llm".into(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            timeout_s: default_timeout(),
            api_key: None,
            context_window_tokens: None,
            max_concurrency: None,
        }
    }

    pub fn http(backend_id: impl Into<String>, endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            kind: LlmBackendKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model_id: model_id.into(),
            temperature: DEFAULT_TEMPERATURE,
            ..Self::mock(backend_id)
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |msg: &str| Err(LlmError::InvalidDescriptor(format!("{}: {msg}", self.backend_id)));
        if self.backend_id.trim().is_empty() {
            return bad("backend_id must not be empty");
        }
        if (self.kind == LlmBackendKind::HttpChat) != self.endpoint.is_some() {
            return bad("endpoint is required for http_chat and only there");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return bad("timeout_s must be positive");
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

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub raw_text: String,
    pub parsed_sections: Vec<NoteSection>,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("language model backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("language model backend rejected the request: {0}")]
    BackendRejected(String),
    #[error("model output violates the section contract after repair: {0}")]
    MalformedOutput(String),
    #[error("prompt does not fit the model context: {0}")]
    ContextOverflow(String),
    #[error("unknown language model backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid language model backend: {0}")]
    InvalidDescriptor(String),
}

impl Retryable for LlmError {
    fn is_retryable(&self) -> bool {
        matches!(self, Self::BackendUnavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub result: GenerationResult,
    /// Backend calls made, counting retries and the repair prompt.
    pub attempts: u32,
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{error} (after {attempts} attempt(s))")]
pub struct LlmFailure {
    pub error: LlmError,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub(crate) enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub(crate) struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    fn new(role: ChatRole, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

/// One backend reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Completion {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

fn repair_request(malformed: &str, titles: &[String], problem: &str) -> String {
    let listed: Vec<String> = titles.iter().map(|t| format!("## {t}")).collect();
    format!(
        "Your previous reply could not be used ({problem}). {OUTPUT_CONTRACT}\n\n\
         The required headings, in order, are:\n{}\n\n\
         Rewrite the previous reply below so that it follows this format exactly.\n\n\
         <previous_reply>\n{malformed}\n</previous_reply>",
        listed.join("\n")
    )
}

struct Backend {
    descriptor: LlmBackendDescriptor,
    permits: Arc<Semaphore>,
}

pub struct LlmGateway {
    backends: HashMap<String, Backend>,
    order: Vec<String>,
    client: reqwest::Client,
    retry: RetryPolicy,
}

impl LlmGateway {
    pub fn new(descriptors: Vec<LlmBackendDescriptor>, retry: RetryPolicy) -> Result<Self, LlmError> {
        let mut backends = HashMap::new();
        let mut order = Vec::new();
        for d in descriptors {
            d.validate()?;
            if backends.contains_key(&d.backend_id) {
                return Err(LlmError::InvalidDescriptor(format!("duplicate backend_id `{}`", d.backend_id)));
            }
            let permits = Arc::new(Semaphore::new(d.max_concurrency.unwrap_or(DEFAULT_LLM_CONCURRENCY)));
            order.push(d.backend_id.clone());
            backends.insert(d.backend_id.clone(), Backend { descriptor: d, permits });
        }
        Ok(Self { backends, order, client: reqwest::Client::new(), retry })
    }

    pub fn descriptor(&self, backend_id: &str) -> Option<&LlmBackendDescriptor> {
        self.backends.get(backend_id).map(|b| &b.descriptor)
    }

    pub fn backend_ids(&self) -> &[String] {
        &self.order
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    async fn complete(&self, backend: &Backend, messages: &[ChatMessage]) -> (Result<Completion, LlmError>, u32) {
        self.retry
            .run(|_| async {
                let _permit = backend.permits.acquire().await.expect("semaphore never closed");
                backends::call(&self.client, &backend.descriptor, messages).await
            })
            .await
    }

    /// Generates and parses a note, with one repair re-prompt if the first
    /// reply does not follow the section contract.
    pub async fn generate(&self, bundle: &PromptBundle, backend_id: &str) -> Result<Generated, LlmFailure> {
        let backend = self.backends.get(backend_id).ok_or_else(|| LlmFailure {
            error: LlmError::UnknownBackend(backend_id.to_owned()),
            attempts: 0,
        })?;
        let descriptor = &backend.descriptor;
        let prompt_estimate = estimate_tokens(&bundle.system_text) + estimate_tokens(&bundle.user_text);
        if let Some(window) = descriptor.context_window_tokens {
            let needed = prompt_estimate + u64::from(descriptor.max_output_tokens);
            if needed > window {
                return Err(LlmFailure {
                    error: LlmError::ContextOverflow(format!(
                        "~{needed} tokens needed, window is {window}"
                    )),
                    attempts: 0,
                });
            }
        }

        let started = Instant::now();
        let mut messages = vec![
            ChatMessage::new(ChatRole::System, &bundle.system_text),
            ChatMessage::new(ChatRole::User, &bundle.user_text),
        ];
        let (first, mut attempts) = self.complete(backend, &messages).await;
        let first = first.map_err(|error| LlmFailure { error, attempts })?;
        let mut usage = usage_or_estimate(&first, &messages);

        let (raw, sections, repaired) = match parse_sections(&first.text, &bundle.section_titles) {
            Ok(sections) => (first.text, sections, false),
            Err(TemplateError::MalformedOutput(problem)) => {
                tracing::info!(backend = backend_id, %problem, "re-prompting for section contract");
                messages.push(ChatMessage::new(ChatRole::Assistant, &first.text));
                messages.push(ChatMessage::new(
                    ChatRole::User,
                    repair_request(&first.text, &bundle.section_titles, &problem),
                ));
                let (second, more) = self.complete(backend, &messages).await;
                attempts += more;
                let second = second.map_err(|error| LlmFailure { error, attempts })?;
                usage = usage + usage_or_estimate(&second, &messages);
                let sections = parse_sections(&second.text, &bundle.section_titles).map_err(|e| LlmFailure {
                    error: LlmError::MalformedOutput(e.to_string()),
                    attempts,
                })?;
                (second.text, sections, true)
            }
            Err(other) => {
                return Err(LlmFailure { error: LlmError::MalformedOutput(other.to_string()), attempts })
            }
        };

        Ok(Generated {
            result: GenerationResult {
                raw_text: raw,
                parsed_sections: sections,
                token_usage: usage,
                latency_ms: started.elapsed().as_millis() as u64,
            },
            attempts,
            repaired,
        })
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

/// Backend-reported usage passes through untouched; otherwise estimate.
fn usage_or_estimate(completion: &Completion, messages: &[ChatMessage]) -> TokenUsage {
    completion.usage.unwrap_or_else(|| TokenUsage {
        prompt_tokens: messages.iter().map(|m| estimate_tokens(&m.content)).sum(),
        completion_tokens: estimate_tokens(&completion.text),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimate_examples() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens(&"x".repeat(400)), 100);
        assert_eq!(estimate_tokens("abcde"), 2);
        // bytes, not chars
        assert_eq!(estimate_tokens("é"), 1);
        assert_eq!(estimate_tokens("éé€"), 2);
    }

    #[test]
    fn descriptor_rules() {
        assert!(LlmBackendDescriptor::mock("m").validate().is_ok());
        let mut d = LlmBackendDescriptor::http("h", "http://localhost:1", "gpt");
        assert!(d.validate().is_ok());
        d.temperature = 2.5;
        assert!(d.validate().is_err());
        d.temperature = 0.2;
        d.endpoint = None;
        assert!(d.validate().is_err());
    }
}
