use serde::Deserialize;
use serde_json::json;

use super::{ChatMessage, ChatRole, Completion, LlmBackendDescriptor, LlmBackendKind, LlmError};
use crate::domain::TokenUsage;
use crate::health::HealthStatus;

const MOCK_WORDS: usize = 10;

pub(super) async fn call(
    client: &reqwest::Client,
    descriptor: &LlmBackendDescriptor,
    messages: &[ChatMessage],
) -> Result<Completion, LlmError> {
    match descriptor.kind {
        LlmBackendKind::Mock => {
            let user = messages
                .iter()
                .find(|m| m.role == ChatRole::User)
                .map(|m| m.content.as_str())
                .unwrap_or_default();
            Ok(Completion { text: mock_completion(user), usage: None })
        }
        LlmBackendKind::HttpChat => http(client, descriptor, messages).await,
    }
}

/// The mock model's reply to a rendered user prompt.
///
/// Headings are the `## ` lines ahead of the first transcript block; every
/// section body is the first ten words found inside the transcript blocks.
pub fn mock_completion(user_text: &str) -> String {
    let mut titles = Vec::new();
    let mut words: Vec<&str> = Vec::new();
    let mut in_transcript = false;
    let mut seen_transcript = false;
    for line in user_text.lines() {
        if line.starts_with("<transcript") {
            in_transcript = true;
            seen_transcript = true;
            continue;
        }
        if line.starts_with("</transcript>") {
            in_transcript = false;
            continue;
        }
        if in_transcript {
            if words.len() < MOCK_WORDS {
                words.extend(line.split_whitespace().take(MOCK_WORDS - words.len()));
            }
        } else if !seen_transcript {
            if let Some(title) = line.strip_prefix("## ") {
                titles.push(title.trim());
            }
        }
    }
    let body = words.join(" ");
    let mut out = String::new();
    for title in titles {
        out.push_str("## ");
        out.push_str(title);
        out.push('\n');
        out.push_str(&body);
        out.push_str("\n\n");
    }
    out
}

fn url(descriptor: &LlmBackendDescriptor, path: &str) -> String {
    let base = descriptor.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
    format!("{base}{path}")
}

fn classify(err: reqwest::Error) -> LlmError {
    if err.is_timeout() || err.is_connect() || err.is_request() {
        LlmError::BackendUnavailable(err.to_string())
    } else {
        LlmError::BackendRejected(err.to_string())
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

async fn http(
    client: &reqwest::Client,
    descriptor: &LlmBackendDescriptor,
    messages: &[ChatMessage],
) -> Result<Completion, LlmError> {
    let body = json!({
        "model": descriptor.model_id,
        "messages": messages,
        "temperature": descriptor.temperature,
        "max_tokens": descriptor.max_output_tokens,
        "stream": false,
    });
    let mut request = client
        .post(url(descriptor, "/v1/chat/completions"))
        .timeout(descriptor.timeout())
        .json(&body);
    if let Some(key) = &descriptor.api_key {
        request = request.bearer_auth(key);
    }
    let response = request.send().await.map_err(classify)?;
    let status = response.status();
    let text = response.text().await.map_err(classify)?;
    if !status.is_success() {
        let lower = text.to_lowercase();
        if status.as_u16() == 400 && (lower.contains("context_length") || lower.contains("context length")) {
            return Err(LlmError::ContextOverflow(text.trim().to_owned()));
        }
        return Err(LlmError::BackendRejected(format!("HTTP {status}: {}", text.trim())));
    }
    let parsed: ChatResponse = serde_json::from_str(&text)
        .map_err(|e| LlmError::BackendRejected(format!("unparseable chat response: {e}")))?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| LlmError::BackendRejected("chat response has no message content".into()))?;
    Ok(Completion {
        text: content,
        usage: parsed.usage.map(|u| TokenUsage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        }),
    })
}

#[derive(Deserialize)]
struct ModelList {
    data: Vec<ModelEntry>,
}

#[derive(Deserialize)]
struct ModelEntry {
    id: String,
}

pub(super) async fn probe(client: &reqwest::Client, descriptor: &LlmBackendDescriptor) -> HealthStatus {
    if descriptor.kind == LlmBackendKind::Mock {
        return HealthStatus::Healthy;
    }
    let mut request = client.get(url(descriptor, "/v1/models")).timeout(descriptor.timeout());
    if let Some(key) = &descriptor.api_key {
        request = request.bearer_auth(key);
    }
    let response = match request.send().await {
        Ok(r) => r,
        Err(e) => return HealthStatus::from_probe_error(&e),
    };
    if !response.status().is_success() {
        return HealthStatus::unhealthy(format!("probe returned HTTP {}", response.status()));
    }
    match response.json::<ModelList>().await {
        Ok(list) if list.data.iter().any(|m| m.id == descriptor.model_id) => HealthStatus::Healthy,
        Ok(_) => HealthStatus::unhealthy(format!("model `{}` is not served", descriptor.model_id)),
        Err(e) => HealthStatus::unhealthy(format!("unparseable model list: {e}")),
    }
}
