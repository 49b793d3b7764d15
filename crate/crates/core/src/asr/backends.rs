use std::process::Stdio;

use reqwest::multipart::{Form, Part};

use super::{AsrBackendDescriptor, AsrBackendKind, AsrError, RawSegment, RawTranscription};
use crate::domain::Recording;
use crate::health::HealthStatus;
use crate::store::digest_hex;

pub(super) async fn call(
    client: &reqwest::Client,
    descriptor: &AsrBackendDescriptor,
    recording: &Recording,
    audio: &[u8],
) -> Result<RawTranscription, AsrError> {
    match descriptor.kind {
        AsrBackendKind::Mock => mock(descriptor, recording, audio).await,
        AsrBackendKind::HttpTranscription => http(client, descriptor, recording, audio).await,
        AsrBackendKind::LocalEngine => local(descriptor, audio).await,
    }
}

/// One segment per nonblank sidecar line, spread evenly over the recording.
async fn mock(
    descriptor: &AsrBackendDescriptor,
    recording: &Recording,
    audio: &[u8],
) -> Result<RawTranscription, AsrError> {
    let address = digest_hex(audio);
    let sidecar = match &descriptor.fixture_dir {
        Some(dir) => match tokio::fs::read_to_string(dir.join(format!("{address}.txt"))).await {
            Ok(text) => Some(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(AsrError::BackendRejected(format!("mock fixture: {e}"))),
        },
        None => None,
    };
    let text = sidecar
        .or_else(|| descriptor.fallback_text.clone())
        .ok_or_else(|| AsrError::BackendRejected(format!("mock has no transcript for audio {address}")))?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let step = recording.duration_s / lines.len().max(1) as f64;
    let segments = lines
        .iter()
        .enumerate()
        .map(|(i, line)| RawSegment {
            start: step * i as f64,
            end: if i + 1 == lines.len() { recording.duration_s } else { step * (i + 1) as f64 },
            text: (*line).to_owned(),
            speaker: None,
        })
        .collect();
    Ok(RawTranscription { text: String::new(), language: None, segments })
}

fn classify(err: reqwest::Error) -> AsrError {
    if err.is_timeout() || err.is_connect() || err.is_request() {
        AsrError::BackendUnavailable(err.to_string())
    } else {
        AsrError::BackendRejected(err.to_string())
    }
}

fn url(descriptor: &AsrBackendDescriptor, path: &str) -> String {
    let base = descriptor.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
    format!("{base}{path}")
}

async fn http(
    client: &reqwest::Client,
    descriptor: &AsrBackendDescriptor,
    recording: &Recording,
    audio: &[u8],
) -> Result<RawTranscription, AsrError> {
    let file = Part::bytes(audio.to_vec())
        .file_name(format!("{}.wav", recording.id))
        .mime_str(recording.media_format.mime_type())
        .expect("static mime type parses");
    let form = Form::new()
        .part("file", file)
        .text("model", descriptor.model_id.clone())
        .text("response_format", "verbose_json")
        .text("language", descriptor.language.clone());
    let mut request = client
        .post(url(descriptor, "/v1/audio/transcriptions"))
        .timeout(descriptor.timeout())
        .multipart(form);
    if let Some(key) = &descriptor.api_key {
        request = request.bearer_auth(key);
    }
    let response = request.send().await.map_err(classify)?;
    let status = response.status();
    let body = response.text().await.map_err(classify)?;
    if !status.is_success() {
        return Err(AsrError::BackendRejected(format!("HTTP {status}: {}", body.trim())));
    }
    serde_json::from_str(&body)
        .map_err(|e| AsrError::BackendRejected(format!("unparseable transcription response: {e}")))
}

async fn local(descriptor: &AsrBackendDescriptor, audio: &[u8]) -> Result<RawTranscription, AsrError> {
    let command = descriptor.command.as_ref().expect("validated descriptor");
    let work = tempfile::tempdir().map_err(|e| AsrError::BackendUnavailable(e.to_string()))?;
    let input = work.path().join("input.wav");
    let output = work.path().join("output.json");
    tokio::fs::write(&input, audio)
        .await
        .map_err(|e| AsrError::BackendUnavailable(e.to_string()))?;
    let child = tokio::process::Command::new(command)
        .arg(&input)
        .arg(&output)
        .arg(&descriptor.model_id)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .kill_on_drop(true)
        .spawn()
        .map_err(|e| AsrError::BackendUnavailable(format!("spawn {}: {e}", command.display())))?;
    let finished = tokio::time::timeout(descriptor.timeout(), child.wait_with_output())
        .await
        .map_err(|_| AsrError::BackendUnavailable(format!("timed out after {}s", descriptor.timeout_s)))?
        .map_err(|e| AsrError::BackendUnavailable(e.to_string()))?;
    if !finished.status.success() {
        let stderr = String::from_utf8_lossy(&finished.stderr);
        return Err(AsrError::BackendRejected(format!(
            "engine exited with {}: {}",
            finished.status,
            stderr.trim()
        )));
    }
    let json = tokio::fs::read(&output)
        .await
        .map_err(|e| AsrError::BackendRejected(format!("engine wrote no output: {e}")))?;
    serde_json::from_slice(&json)
        .map_err(|e| AsrError::BackendRejected(format!("unparseable engine output: {e}")))
}

pub(super) async fn probe(client: &reqwest::Client, descriptor: &AsrBackendDescriptor) -> HealthStatus {
    match descriptor.kind {
        AsrBackendKind::Mock => HealthStatus::Healthy,
        AsrBackendKind::HttpTranscription => {
            let mut request = client.get(url(descriptor, "/v1/models")).timeout(descriptor.timeout());
            if let Some(key) = &descriptor.api_key {
                request = request.bearer_auth(key);
            }
            match request.send().await {
                Ok(r) if r.status().is_success() => HealthStatus::Healthy,
                Ok(r) => HealthStatus::unhealthy(format!("probe returned HTTP {}", r.status())),
                Err(e) => HealthStatus::from_probe_error(&e),
            }
        }
        AsrBackendKind::LocalEngine => {
            let command = descriptor.command.as_ref().expect("validated descriptor");
            match tokio::fs::metadata(command).await {
                Ok(m) if m.is_file() => HealthStatus::Healthy,
                Ok(_) => HealthStatus::unhealthy(format!("{} is not a file", command.display())),
                Err(e) => HealthStatus::unhealthy(format!("{}: {e}", command.display())),
            }
        }
    }
}
