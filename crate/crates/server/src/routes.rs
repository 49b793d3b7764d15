//! Endpoint table, authentication layer and request handlers.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, MatchedPath, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use scribe_core::domain::{
    FacilityId, JobId, Note, NoteId, NoteSection, RecordingId, Role, Session, SessionId, TemplateId, TranscriptId,
    UserProfile,
};
use scribe_core::metrics::{CostModel, Period};
use scribe_core::pipeline::{Job, SessionDetail};
use scribe_core::store::{SortOrder, StoreError};
use scribe_core::template::{is_builtin_id, NoteTemplate, TemplateSection};
use scribe_core::{NoteRequest, Orchestrator, ScribeError};

use crate::auth::Authenticator;
use crate::config::ApiConfig;
use crate::error::ApiError;
use crate::report::{build_report, MetricsReport};

/// Bytes allowed on top of the audio limit for multipart framing.
pub const MULTIPART_SLACK_BYTES: u64 = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Access {
    Public,
    User,
    Admin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyKind {
    None,
    Json,
    Multipart,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RouteSpec {
    pub method: &'static str,
    pub path: &'static str,
    pub access: Access,
    pub body: BodyKind,
    pub summary: &'static str,
    pub success: u16,
    pub errors: &'static [u16],
}

const fn route(
    method: &'static str,
    path: &'static str,
    access: Access,
    body: BodyKind,
    success: u16,
    errors: &'static [u16],
    summary: &'static str,
) -> RouteSpec {
    RouteSpec { method, path, access, body, summary, success, errors }
}

use Access::{Admin, Public, User};
use BodyKind::{Json as JsonBody, Multipart as Upload, None as NoBody};

/// Every endpoint the service exposes. The authentication layer and the
/// OpenAPI document are both driven by this table.
pub const ROUTES: &[RouteSpec] = &[
    route("GET", "/healthz", Public, NoBody, 200, &[503], "Per-backend health"),
    route("GET", "/openapi", User, NoBody, 200, &[401], "This API description"),
    route("POST", "/sessions", User, JsonBody, 201, &[401, 422], "Create a session"),
    route("GET", "/sessions", User, NoBody, 200, &[401], "List the caller's sessions, newest first"),
    route("GET", "/sessions/{id}", User, NoBody, 200, &[401, 404], "Session with recordings, notes and status"),
    route("POST", "/sessions/{id}/archive", User, NoBody, 200, &[401, 404], "Archive a session"),
    route(
        "POST",
        "/sessions/{id}/recordings",
        User,
        Upload,
        202,
        &[401, 404, 409, 413, 415, 422, 507],
        "Upload WAV audio in the multipart field `file` and queue transcription",
    ),
    route("GET", "/recordings/{id}", User, NoBody, 200, &[401, 404], "Recording and its status"),
    route("GET", "/recordings/{id}/transcript", User, NoBody, 200, &[401, 404], "Transcript of a recording"),
    route("POST", "/sessions/{id}/notes", User, JsonBody, 202, &[401, 404, 409, 422], "Queue note generation"),
    route("GET", "/notes/{id}", User, NoBody, 200, &[401, 404], "Note with its content digest"),
    route("PATCH", "/notes/{id}", User, JsonBody, 200, &[401, 404, 409, 422], "Edit section bodies"),
    route("POST", "/notes/{id}/finalize", User, NoBody, 200, &[401, 404, 409], "Finalize a note"),
    route("GET", "/jobs/{id}", User, NoBody, 200, &[401, 404], "Background job state"),
    route("GET", "/templates", User, NoBody, 200, &[401], "Builtin and visible custom templates"),
    route("POST", "/templates", User, JsonBody, 201, &[401, 422], "Create a custom template"),
    route("GET", "/templates/{id}", User, NoBody, 200, &[401, 404], "One template"),
    route("GET", "/metrics", Admin, NoBody, 200, &[401, 403, 422], "Usage metrics for `period=YYYY-MM[..YYYY-MM]`"),
];

pub fn find_route(method: &Method, path: &str) -> Option<&'static RouteSpec> {
    ROUTES.iter().find(|r| r.method == method.as_str() && r.path == path)
}

#[derive(Clone)]
pub struct AppState {
    pub orch: Arc<Orchestrator>,
    pub auth: Arc<Authenticator>,
    pub max_upload_bytes: u64,
    pub cost: Option<CostModel>,
}

impl AppState {
    pub fn new(orch: Arc<Orchestrator>, auth: Authenticator, config: &ApiConfig) -> Self {
        Self { orch, auth: Arc::new(auth), max_upload_bytes: config.max_upload_bytes, cost: config.cost }
    }
}

pub fn router(state: AppState) -> Router {
    let upload_limit = (state.max_upload_bytes + MULTIPART_SLACK_BYTES) as usize;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/openapi", get(openapi))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/archive", post(archive_session))
        .route("/sessions/{id}/recordings", post(upload_recording).layer(DefaultBodyLimit::max(upload_limit)))
        .route("/sessions/{id}/notes", post(submit_note))
        .route("/recordings/{id}", get(get_recording))
        .route("/recordings/{id}/transcript", get(get_transcript))
        .route("/notes/{id}", get(get_note).patch(edit_note))
        .route("/notes/{id}/finalize", post(finalize_note))
        .route("/jobs/{id}", get(get_job))
        .route("/templates", get(list_templates).post(create_template))
        .route("/templates/{id}", get(get_template))
        .route("/metrics", get(metrics))
        .route_layer(middleware::from_fn_with_state(state.clone(), authenticate))
        .fallback(|| async { ApiError::Rejected(StatusCode::NOT_FOUND, "no such endpoint".into()) })
        .with_state(state)
}

/// Looks the matched route up in [`ROUTES`]; anything not listed is
/// treated as requiring a user.
async fn authenticate(
    State(state): State<AppState>,
    matched: Option<MatchedPath>,
    mut request: Request,
    next: Next,
) -> Result<Response, ApiError> {
    let access = matched
        .as_ref()
        .and_then(|m| find_route(request.method(), m.as_str()))
        .map_or(Access::User, |r| r.access);
    if access == Access::Public {
        return Ok(next.run(request).await);
    }
    let header = request.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
    let user = state.auth.authenticate(header, &state.orch)?;
    if access == Access::Admin && user.role != Role::Admin {
        return Err(ApiError::Forbidden("administrator role required".into()));
    }
    request.extensions_mut().insert(user);
    Ok(next.run(request).await)
}

type Caller = Extension<UserProfile>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|r| ApiError::Rejected(r.status(), r.body_text()))
}

fn join_error(err: tokio::task::JoinError) -> ApiError {
    ScribeError::Store(StoreError::Io(std::io::Error::other(err))).into()
}

fn is_admin(user: &UserProfile) -> bool {
    user.role == Role::Admin
}

/// Other users' resources are reported as missing.
fn owned_session(orch: &Orchestrator, user: &UserProfile, id: &SessionId) -> Result<Session, ApiError> {
    let session: Session = orch.store().load(id).map_err(ScribeError::from)?;
    if session.owner_id != user.id && !is_admin(user) {
        return Err(ScribeError::NotFound { kind: "session".into(), id: id.to_string() }.into());
    }
    Ok(session)
}

async fn healthz(State(state): State<AppState>) -> Response {
    let (asr, llm) = tokio::join!(state.orch.asr().health(), state.orch.llm().health());
    let healthy = asr.iter().chain(&llm).all(|b| b.status.is_healthy());
    let status = if healthy { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    let body = json!({ "status": if healthy { "ok" } else { "degraded" }, "asr": asr, "llm": llm });
    (status, Json(body)).into_response()
}

async fn openapi() -> Json<serde_json::Value> {
    Json(crate::openapi::document())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    #[serde(default)]
    facility_id: Option<FacilityId>,
}

async fn create_session(
    State(state): State<AppState>,
    Extension(user): Caller,
    raw: axum::body::Bytes,
) -> Result<(StatusCode, Json<Session>), ApiError> {
    // The body is optional, so it is parsed by hand rather than with `Json`.
    let request = if raw.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice::<CreateSession>(&raw)
            .map_err(|e| ApiError::Rejected(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid body: {e}")))?
    };
    let session = state.orch.create_session(&user.id, request.facility_id)?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn list_sessions(State(state): State<AppState>, Extension(user): Caller) -> Result<Json<Vec<Session>>, ApiError> {
    let sessions = state.orch.store().list_sessions(&user.id, SortOrder::Descending).map_err(ScribeError::from)?;
    Ok(Json(sessions))
}

async fn get_session(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<SessionId>,
) -> Result<Json<SessionDetail>, ApiError> {
    owned_session(&state.orch, &user, &id)?;
    Ok(Json(state.orch.session_detail(&id)?))
}

async fn archive_session(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<SessionId>,
) -> Result<Json<Session>, ApiError> {
    owned_session(&state.orch, &user, &id)?;
    Ok(Json(state.orch.archive_session(user.id.as_str(), &id)?))
}

#[derive(Serialize)]
struct Accepted<T> {
    #[serde(flatten)]
    entity: T,
    job: Job,
}

async fn upload_recording(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<SessionId>,
    headers: HeaderMap,
    multipart: Result<Multipart, axum::extract::multipart::MultipartRejection>,
) -> Result<Response, ApiError> {
    let limit = state.max_upload_bytes;
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    if declared.is_some_and(|n| n > limit + MULTIPART_SLACK_BYTES) {
        return Err(ApiError::PayloadTooLarge(limit));
    }
    owned_session(&state.orch, &user, &id)?;
    let mut multipart = multipart.map_err(|r| ApiError::Rejected(r.status(), r.body_text()))?;

    let mut upload: Option<(Vec<u8>, Option<String>)> = None;
    while let Some(mut field) = multipart.next_field().await.map_err(multipart_error)? {
        if field.name() != Some("file") || upload.is_some() {
            while field.chunk().await.map_err(multipart_error)?.is_some() {}
            continue;
        }
        let mime = field.content_type().map(str::to_owned);
        let mut bytes = Vec::new();
        while let Some(chunk) = field.chunk().await.map_err(multipart_error)? {
            if (bytes.len() + chunk.len()) as u64 > limit {
                return Err(ApiError::PayloadTooLarge(limit));
            }
            bytes.extend_from_slice(&chunk);
        }
        upload = Some((bytes, mime));
    }
    let (bytes, mime) = upload.ok_or_else(|| ApiError::Invalid("multipart field `file` is required".into()))?;

    let orch = Arc::clone(&state.orch);
    let (recording, job) = tokio::task::spawn_blocking(move || {
        orch.attach_recording(user.id.as_str(), &id, &bytes, mime.as_deref())
    })
    .await
    .map_err(join_error)??;
    Ok((StatusCode::ACCEPTED, Json(Accepted { entity: recording, job })).into_response())
}

fn multipart_error(err: axum::extract::multipart::MultipartError) -> ApiError {
    if err.status() == StatusCode::PAYLOAD_TOO_LARGE {
        return ApiError::Rejected(StatusCode::PAYLOAD_TOO_LARGE, "upload exceeds the size limit".into());
    }
    ApiError::Rejected(err.status(), err.body_text())
}

fn owned_recording(
    orch: &Orchestrator,
    user: &UserProfile,
    id: &RecordingId,
) -> Result<scribe_core::domain::Recording, ApiError> {
    let recording: scribe_core::domain::Recording = orch.store().load(id).map_err(ScribeError::from)?;
    owned_session(orch, user, &recording.session_id).map_err(|_| not_found("recording", id))?;
    Ok(recording)
}

fn not_found(kind: &str, id: &impl ToString) -> ApiError {
    ScribeError::NotFound { kind: kind.into(), id: id.to_string() }.into()
}

async fn get_recording(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<RecordingId>,
) -> Result<Json<scribe_core::domain::Recording>, ApiError> {
    Ok(Json(owned_recording(&state.orch, &user, &id)?))
}

async fn get_transcript(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<RecordingId>,
) -> Result<Json<scribe_core::domain::Transcript>, ApiError> {
    let recording = owned_recording(&state.orch, &user, &id)?;
    let transcript_id = recording.transcript_id.ok_or_else(|| not_found("transcript for recording", &id))?;
    let transcript = state.orch.store().load(&transcript_id).map_err(ScribeError::from)?;
    Ok(Json(transcript))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitNote {
    template_id: TemplateId,
    #[serde(default)]
    transcript_ids: Vec<TranscriptId>,
    #[serde(default)]
    encounter_context: Option<String>,
    #[serde(default)]
    llm_backend: Option<String>,
}

/// A note plus the digest `PATCH` expects back.
#[derive(Serialize)]
struct NoteView {
    #[serde(flatten)]
    note: Note,
    content_digest: String,
}

impl From<Note> for NoteView {
    fn from(note: Note) -> Self {
        Self { content_digest: note.content_digest(), note }
    }
}

async fn submit_note(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<SessionId>,
    payload: Result<Json<SubmitNote>, JsonRejection>,
) -> Result<Response, ApiError> {
    let payload = body(payload)?;
    owned_session(&state.orch, &user, &id)?;
    let template = state.orch.resolve_template(&payload.template_id)?;
    if !template_visible(&template, &user) {
        return Err(not_found("template", &payload.template_id));
    }
    let request = NoteRequest {
        template_id: payload.template_id,
        transcript_ids: payload.transcript_ids,
        encounter_context: payload.encounter_context,
        llm_backend: payload.llm_backend,
    };
    let (note, job) = state.orch.submit_note(user.id.as_str(), &id, &request)?;
    Ok((StatusCode::ACCEPTED, Json(Accepted { entity: NoteView::from(note), job })).into_response())
}

fn owned_note(orch: &Orchestrator, user: &UserProfile, id: &NoteId) -> Result<Note, ApiError> {
    let note: Note = orch.store().load(id).map_err(ScribeError::from)?;
    owned_session(orch, user, &note.session_id).map_err(|_| not_found("note", id))?;
    Ok(note)
}

async fn get_note(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<NoteId>,
) -> Result<Json<NoteView>, ApiError> {
    Ok(Json(owned_note(&state.orch, &user, &id)?.into()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditNote {
    sections: Vec<NoteSection>,
    #[serde(default)]
    expected_digest: Option<String>,
}

async fn edit_note(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<NoteId>,
    payload: Result<Json<EditNote>, JsonRejection>,
) -> Result<Json<NoteView>, ApiError> {
    let payload = body(payload)?;
    owned_note(&state.orch, &user, &id)?;
    let note = state.orch.edit_note(user.id.as_str(), &id, payload.sections, payload.expected_digest.as_deref())?;
    Ok(Json(note.into()))
}

async fn finalize_note(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<NoteId>,
) -> Result<Json<NoteView>, ApiError> {
    owned_note(&state.orch, &user, &id)?;
    Ok(Json(state.orch.finalize_note(user.id.as_str(), &id)?.into()))
}

async fn get_job(State(state): State<AppState>, Extension(user): Caller, Path(id): Path<JobId>) -> Result<Json<Job>, ApiError> {
    let job: Job = state.orch.store().load(&id).map_err(ScribeError::from)?;
    if job.actor_id != user.id.as_str() && !is_admin(&user) {
        return Err(not_found("job", &id));
    }
    Ok(Json(job))
}

fn template_visible(template: &NoteTemplate, user: &UserProfile) -> bool {
    is_builtin_id(&template.id) || template.owner_id.as_ref() == Some(&user.id) || is_admin(user)
}

async fn list_templates(
    State(state): State<AppState>,
    Extension(user): Caller,
) -> Result<Json<Vec<NoteTemplate>>, ApiError> {
    Ok(Json(state.orch.list_templates(&user)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateTemplate {
    name: String,
    #[serde(default)]
    preamble: String,
    sections: Vec<TemplateSection>,
}

async fn create_template(
    State(state): State<AppState>,
    Extension(user): Caller,
    payload: Result<Json<CreateTemplate>, JsonRejection>,
) -> Result<(StatusCode, Json<NoteTemplate>), ApiError> {
    let payload = body(payload)?;
    let template = state.orch.create_template(&user.id, &payload.name, &payload.preamble, payload.sections)?;
    Ok((StatusCode::CREATED, Json(template)))
}

async fn get_template(
    State(state): State<AppState>,
    Extension(user): Caller,
    Path(id): Path<TemplateId>,
) -> Result<Json<NoteTemplate>, ApiError> {
    let template = state.orch.resolve_template(&id)?;
    if !template_visible(&template, &user) {
        return Err(not_found("template", &id));
    }
    Ok(Json(template))
}

#[derive(Debug, Deserialize)]
struct MetricsQuery {
    period: Option<String>,
}

async fn metrics(
    State(state): State<AppState>,
    Query(query): Query<MetricsQuery>,
) -> Result<Json<MetricsReport>, ApiError> {
    let raw = query.period.ok_or_else(|| ApiError::Invalid("query parameter `period` is required".into()))?;
    let period: Period = raw.parse().map_err(|e| ApiError::Invalid(format!("period: {e}")))?;
    let orch = Arc::clone(&state.orch);
    let cost = state.cost;
    let report = tokio::task::spawn_blocking(move || build_report(orch.store(), period, cost.as_ref()))
        .await
        .map_err(join_error)?
        .map_err(ScribeError::from)?;
    Ok(Json(report))
}
