use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use scribe_core::domain::TokenUsage;
use scribe_core::health::HealthStatus;
use scribe_core::llm::{estimate_tokens, LlmBackendDescriptor, LlmError, LlmGateway, PromptBundle};
use scribe_core::retry::RetryPolicy;
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Mode {
    Good,
    NoUsage,
    RepairOnce,
    AlwaysMalformed,
    ContextTooLong,
    ServerError,
    SlowTwice,
}

#[derive(Clone)]
struct Stub {
    mode: Mode,
    calls: Arc<AtomicU32>,
    requests: Arc<Mutex<Vec<Value>>>,
}

const GOOD: &str = "Here you go.\n## Assessment\nLikely sprain.\n\n## Plan\nIce, rest.\n";

fn reply(text: &str, usage: bool) -> Response {
    let mut body = json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] });
    if usage {
        body["usage"] = json!({ "prompt_tokens": 812, "completion_tokens": 240, "total_tokens": 1052 });
    }
    Json(body).into_response()
}

async fn chat(State(stub): State<Stub>, Json(req): Json<Value>) -> Response {
    let n = stub.calls.fetch_add(1, Ordering::SeqCst) + 1;
    stub.requests.lock().unwrap().push(req);
    match stub.mode {
        Mode::Good => reply(GOOD, true),
        Mode::NoUsage => reply(GOOD, false),
        Mode::RepairOnce if n == 1 => reply("Assessment: sprain. Plan: ice.", true),
        Mode::RepairOnce => reply(GOOD, true),
        Mode::AlwaysMalformed => reply("## Plan\nfirst\n## Assessment\nsecond", true),
        Mode::ContextTooLong => (
            StatusCode::BAD_REQUEST,
            Json(json!({ "error": { "message": "This model's maximum context_length is 4096 tokens", "code": "context_length_exceeded" } })),
        )
            .into_response(),
        Mode::ServerError => (StatusCode::INTERNAL_SERVER_ERROR, "boom").into_response(),
        Mode::SlowTwice => {
            if n <= 2 {
                tokio::time::sleep(Duration::from_millis(800)).await;
            }
            reply(GOOD, true)
        }
    }
}

async fn models() -> Json<Value> {
    Json(json!({ "object": "list", "data": [{ "id": "served-model" }] }))
}

async fn serve(mode: Mode) -> (String, Stub) {
    let stub = Stub { mode, calls: Arc::default(), requests: Arc::default() };
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/models", get(models))
        .with_state(stub.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}"), stub)
}

fn bundle() -> PromptBundle {
    PromptBundle {
        system_text: "You draft notes.".into(),
        user_text: "## Assessment\n\n## Plan\n\n<transcript index=\"1\">\nankle hurts\n</transcript>\n".into(),
        template_id: "t".into(),
        transcript_ids: vec!["x".into()],
        section_titles: vec!["Assessment".into(), "Plan".into()],
    }
}

fn gateway(endpoint: &str, model: &str, timeout_s: f64) -> LlmGateway {
    let mut d = LlmBackendDescriptor::http("chat", endpoint, model);
    d.timeout_s = timeout_s;
    d.api_key = Some("sk-test".into());
    LlmGateway::new(vec![d], RetryPolicy { max_retries: 2, base_delay_s: 0.01, factor: 2.0 }).unwrap()
}

#[tokio::test]
async fn reported_usage_passes_through() {
    let (url, stub) = serve(Mode::Good).await;
    let g = gateway(&url, "served-model", 5.0).generate(&bundle(), "chat").await.unwrap();
    assert_eq!(g.result.token_usage, TokenUsage { prompt_tokens: 812, completion_tokens: 240 });
    assert_eq!(g.attempts, 1);
    assert!(!g.repaired);
    assert_eq!(g.result.parsed_sections[0].body, "Likely sprain.");
    assert_eq!(g.result.parsed_sections[1].body, "Ice, rest.");
    let req = stub.requests.lock().unwrap()[0].clone();
    assert_eq!(req["model"], "served-model");
    assert_eq!(req["messages"][0]["role"], "system");
    assert_eq!(req["messages"][1]["role"], "user");
    assert_eq!(req["max_tokens"], 1500);
    assert_eq!(req["temperature"], 0.2);
}

#[tokio::test]
async fn missing_usage_is_estimated() {
    let (url, _) = serve(Mode::NoUsage).await;
    let b = bundle();
    let g = gateway(&url, "served-model", 5.0).generate(&b, "chat").await.unwrap();
    assert_eq!(g.result.token_usage.prompt_tokens, estimate_tokens(&b.system_text) + estimate_tokens(&b.user_text));
    assert_eq!(g.result.token_usage.completion_tokens, (GOOD.len() as u64).div_ceil(4));
}

#[tokio::test]
async fn one_repair_prompt_fixes_the_format() {
    let (url, stub) = serve(Mode::RepairOnce).await;
    let g = gateway(&url, "served-model", 5.0).generate(&bundle(), "chat").await.unwrap();
    assert!(g.repaired);
    assert_eq!(g.attempts, 2);
    assert_eq!(g.result.token_usage, TokenUsage { prompt_tokens: 1624, completion_tokens: 480 });
    let second = stub.requests.lock().unwrap()[1].clone();
    let roles: Vec<_> = second["messages"].as_array().unwrap().iter().map(|m| m["role"].as_str().unwrap().to_owned()).collect();
    assert_eq!(roles, ["system", "user", "assistant", "user"]);
    assert!(second["messages"][3]["content"].as_str().unwrap().contains("## Assessment\n## Plan"));
}

#[tokio::test]
async fn second_malformed_reply_is_an_error() {
    let (url, stub) = serve(Mode::AlwaysMalformed).await;
    let err = gateway(&url, "served-model", 5.0).generate(&bundle(), "chat").await.unwrap_err();
    assert!(matches!(err.error, LlmError::MalformedOutput(_)));
    assert_eq!(stub.calls.load(Ordering::SeqCst), 2);
}

#[tokio::test]
async fn context_overflow_is_recognized() {
    let (url, stub) = serve(Mode::ContextTooLong).await;
    let err = gateway(&url, "served-model", 5.0).generate(&bundle(), "chat").await.unwrap_err();
    assert!(matches!(err.error, LlmError::ContextOverflow(_)));
    assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn configured_window_is_checked_before_calling() {
    let (url, stub) = serve(Mode::Good).await;
    let mut d = LlmBackendDescriptor::http("chat", &url, "served-model");
    d.context_window_tokens = Some(1000);
    let g = LlmGateway::new(vec![d], RetryPolicy::default()).unwrap();
    let err = g.generate(&bundle(), "chat").await.unwrap_err();
    assert!(matches!(err.error, LlmError::ContextOverflow(_)));
    assert_eq!(err.attempts, 0);
    assert_eq!(stub.calls.load(Ordering::SeqCst), 0);
}

#[tokio::test]
async fn server_errors_are_not_retried() {
    let (url, stub) = serve(Mode::ServerError).await;
    let err = gateway(&url, "served-model", 5.0).generate(&bundle(), "chat").await.unwrap_err();
    assert!(matches!(err.error, LlmError::BackendRejected(_)));
    assert_eq!(err.attempts, 1);
    assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn timeouts_are_retried() {
    let (url, stub) = serve(Mode::SlowTwice).await;
    let g = gateway(&url, "served-model", 0.3).generate(&bundle(), "chat").await.unwrap();
    assert_eq!(g.attempts, 3);
    assert_eq!(stub.calls.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn unreachable_backend_exhausts_retries() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let err = gateway(&url, "served-model", 1.0).generate(&bundle(), "chat").await.unwrap_err();
    assert!(matches!(err.error, LlmError::BackendUnavailable(_)));
    assert_eq!(err.attempts, 3);
    let g = gateway(&url, "served-model", 1.0);
    assert!(matches!(g.health_check("chat").await, HealthStatus::Unhealthy { reason } if reason.starts_with("connection")));
}

#[tokio::test]
async fn health_requires_the_configured_model() {
    let (url, _) = serve(Mode::Good).await;
    assert!(gateway(&url, "served-model", 5.0).health_check("chat").await.is_healthy());
    assert!(!gateway(&url, "other-model", 5.0).health_check("chat").await.is_healthy());
    assert!(!gateway(&url, "served-model", 5.0).health_check("nope").await.is_healthy());
}

#[tokio::test]
async fn unknown_backend() {
    let g = LlmGateway::new(vec![LlmBackendDescriptor::mock("m")], RetryPolicy::default()).unwrap();
    let err = g.generate(&bundle(), "missing").await.unwrap_err();
    assert_eq!(err.error, LlmError::UnknownBackend("missing".into()));
}
