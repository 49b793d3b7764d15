mod common;

use reqwest::{Method, StatusCode};

use common::*;
use scribe_server::config::{ApiConfig, AuthMode};
use scribe_server::{serve, ServeError};

#[tokio::test]
async fn zero_llm_backends_is_config_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.llm.clear();
    assert!(matches!(serve(c).await, Err(ServeError::ConfigInvalid(_))));

    let mut c = config(dir.path());
    c.asr.clear();
    assert!(matches!(serve(c).await, Err(ServeError::ConfigInvalid(_))));
}

#[tokio::test]
async fn none_dev_needs_the_dev_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.auth.mode = AuthMode::NoneDev;
    c.dev = false;
    assert!(matches!(serve(c).await, Err(ServeError::ConfigInvalid(_))));
}

#[tokio::test]
async fn unknown_token_user_and_default_backend_are_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.auth.tokens.insert("t9".into(), "ghost".into());
    assert!(c.validate().is_err());

    let mut c = config(dir.path());
    c.default_llm_backend = Some("missing".into());
    assert!(matches!(serve(c).await, Err(ServeError::ConfigInvalid(_))));
}

#[tokio::test]
async fn occupied_port_is_address_in_use() {
    let first = start().await;
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.listen = first.handle.local_addr();
    assert!(matches!(serve(c).await, Err(ServeError::AddressInUse(a)) if a == first.handle.local_addr()));
    first.stop().await;
}

#[tokio::test]
async fn dev_config_health_is_ok() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ApiConfig::dev(dir.path().join("data"));
    c.listen = "127.0.0.1:0".parse().unwrap();
    let handle = serve(c).await.unwrap();
    let resp = reqwest::get(format!("http://{}/healthz", handle.local_addr())).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["asr"][0]["status"], "healthy");
    handle.shutdown().await.unwrap();
}

#[tokio::test]
async fn toml_file_with_env_overrides_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scribe.toml");
    std::fs::write(
        &path,
        format!(
            r#"
storage_root = "{}"
listen = "127.0.0.1:0"

[auth]
mode = "static_token"
tokens = {{ t1 = "u1" }}

[[users]]
id = "u1"

[[asr]]
backend_id = "mock-asr"
kind = "mock"
model_id = "mock-asr"
fallback_text = "hello there"

[[llm]]
backend_id = "mock-llm"
kind = "mock"
model_id = "mock-llm"
"#,
            dir.path().join("data").display()
        ),
    )
    .unwrap();
    let c = ApiConfig::load(&path).unwrap();
    assert_eq!(c.auth.tokens["t1"].as_str(), "u1");
    let handle = serve(c).await.unwrap();
    let client = reqwest::Client::new();
    let resp = client
        .request(Method::GET, format!("http://{}/sessions", handle.local_addr()))
        .bearer_auth("t1")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    handle.shutdown().await.unwrap();

    std::fs::write(&path, "storage_root = 3").unwrap();
    assert!(ApiConfig::load(&path).is_err());
}

/// Jobs queued when the service stopped run after the next start.
#[tokio::test]
async fn restart_recovers_queued_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path());
    let orch = scribe_server::open_orchestrator(&c).unwrap();
    let owner = "dr-lee".into();
    let session = orch.create_session(&owner, None).unwrap();
    let (recording, _job) = orch.attach_recording("dr-lee", &session.id, &wav(2.0, 4), None).unwrap();
    drop(orch);

    let handle = serve(c).await.unwrap();
    assert_eq!(handle.recovered_jobs(), 1);
    let server = Server {
        base: format!("http://{}", handle.local_addr()),
        handle,
        dir,
        client: reqwest::Client::new(),
    };
    let (_, detail) = server.json(Method::GET, &format!("/sessions/{}", session.id), CLINICIAN, None).await;
    let job_id = {
        let jobs = server.handle.orchestrator().store().jobs().unwrap();
        jobs.into_iter().find(|j| j.subject_id == recording.id.as_str()).unwrap().id
    };
    let job = server.wait_job(job_id.as_str(), CLINICIAN).await;
    assert_eq!(job["state"], "done", "{detail}");
    server.stop().await;
}
