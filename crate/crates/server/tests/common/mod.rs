#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use reqwest::{Client, Method, StatusCode};
use serde_json::Value;

use scribe_core::asr::AsrBackendDescriptor;
use scribe_core::domain::{Role, UserId};
use scribe_core::retry::RetryPolicy;
use scribe_server::config::{ApiConfig, AuthConfig, AuthMode, UserSeed};
use scribe_server::{serve, ServerHandle};

pub const ENCOUNTER: &str = "Patient reports chest pain since this morning radiating to the left arm.\n\
Denies shortness of breath. History of hypertension.\n\
Plan troponin and ECG, reassess in two hours.";

pub const CLINICIAN: &str = "t-clin";
pub const OTHER: &str = "t-other";
pub const ADMIN: &str = "t-admin";

fn seed(id: &str, role: Role) -> UserSeed {
    UserSeed { id: UserId::from(id), display_name: None, role }
}

/// Mock backends, static tokens for two clinicians and an admin, and a
/// storage root inside `dir`.
pub fn config(dir: &std::path::Path) -> ApiConfig {
    let mut c = ApiConfig::dev(dir.join("data"));
    c.listen = "127.0.0.1:0".parse().unwrap();
    c.dev = false;
    c.auth = AuthConfig {
        mode: AuthMode::StaticToken,
        tokens: BTreeMap::from([
            (CLINICIAN.to_owned(), UserId::from("dr-lee")),
            (OTHER.to_owned(), UserId::from("dr-ng")),
            (ADMIN.to_owned(), UserId::from("ops")),
        ]),
        hs256_key: None,
        issuer: None,
    };
    c.users = vec![seed("dr-lee", Role::Clinician), seed("dr-ng", Role::Clinician), seed("ops", Role::Admin)];
    let mut asr = AsrBackendDescriptor::mock("mock-asr");
    asr.fallback_text = Some(ENCOUNTER.into());
    c.asr = vec![asr];
    c.retry = RetryPolicy { max_retries: 2, base_delay_s: 0.0, factor: 2.0 };
    c
}

pub struct Server {
    pub dir: tempfile::TempDir,
    pub handle: ServerHandle,
    pub base: String,
    pub client: Client,
}

pub async fn start() -> Server {
    start_with(|_| {}).await
}

pub async fn start_with(adjust: impl FnOnce(&mut ApiConfig)) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    adjust(&mut c);
    let handle = serve(c).await.expect("server starts");
    let base = format!("http://{}", handle.local_addr());
    Server { dir, handle, base, client: Client::new() }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn request(&self, method: Method, path: &str, token: Option<&str>) -> reqwest::RequestBuilder {
        let rb = self.client.request(method, self.url(path));
        match token {
            Some(t) => rb.bearer_auth(t),
            None => rb,
        }
    }

    pub async fn json(&self, method: Method, path: &str, token: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut rb = self.request(method, path, Some(token));
        if let Some(b) = body {
            rb = rb.json(&b);
        }
        let resp = rb.send().await.unwrap();
        let status = resp.status();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    pub async fn upload(&self, session: &str, token: &str, bytes: Vec<u8>, mime: &str) -> (StatusCode, Value) {
        let part = reqwest::multipart::Part::bytes(bytes).file_name("visit.wav").mime_str(mime).unwrap();
        let form = reqwest::multipart::Form::new().part("file", part);
        let resp = self
            .request(Method::POST, &format!("/sessions/{session}/recordings"), Some(token))
            .multipart(form)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    /// Polls `GET /jobs/{id}` until the job is done or failed.
    pub async fn wait_job(&self, job: &str, token: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let (status, body) = self.json(Method::GET, &format!("/jobs/{job}"), token, None).await;
            assert_eq!(status, StatusCode::OK, "{body}");
            if matches!(body["state"].as_str(), Some("done" | "failed")) {
                return body;
            }
            assert!(Instant::now() < deadline, "job {job} did not finish: {body}");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn stop(self) -> tempfile::TempDir {
        self.handle.shutdown().await.unwrap();
        self.dir
    }
}

pub fn wav(seconds: f64, seed: i16) -> Vec<u8> {
    scribe_core::audio::silent_wav(seconds, 16_000, seed)
}

pub fn full_visit_id() -> String {
    scribe_core::template::builtin_by_name(scribe_core::template::FULL_VISIT).unwrap().id.to_string()
}

/// Session, upload, transcription and a generated Full Visit note over
/// HTTP. Returns the session id and the note body.
pub async fn happy_path(server: &Server, token: &str, seed: i16) -> (String, Value) {
    let (status, session) = server.json(Method::POST, "/sessions", token, None).await;
    assert_eq!(status, StatusCode::CREATED, "{session}");
    let sid = session["id"].as_str().unwrap().to_owned();

    let (status, rec) = server.upload(&sid, token, wav(3.0, seed), "audio/wav").await;
    assert_eq!(status, StatusCode::ACCEPTED, "{rec}");
    let job = server.wait_job(rec["job"]["id"].as_str().unwrap(), token).await;
    assert_eq!(job["state"], "done", "{job}");

    let body = serde_json::json!({ "template_id": full_visit_id() });
    let (status, note) = server.json(Method::POST, &format!("/sessions/{sid}/notes"), token, Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{note}");
    let job = server.wait_job(note["job"]["id"].as_str().unwrap(), token).await;
    assert_eq!(job["state"], "done", "{job}");

    let (status, note) = server.json(Method::GET, &format!("/notes/{}", note["id"].as_str().unwrap()), token, None).await;
    assert_eq!(status, StatusCode::OK);
    (sid, note)
}
