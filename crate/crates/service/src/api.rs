//! HTTP and WebSocket routes.

use std::collections::BTreeSet;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use classroom_core::evaluation::{score_quiz, EvalError, QuizAnswers, QuizResult, SurveyResponse};
use classroom_core::fias::FiasReport;
use classroom_core::session::SystemClock;
use classroom_core::store::{SessionFilter, SessionSummary, StoreError, StoreLine, TranscriptStore};
use classroom_core::{
    apply_ablation, default_roster, Ablation, AgentSpec, ClassroomSession, Phase, SessionConfig, SessionEvent,
};
use classroom_core::session::SessionSetup;

use crate::catalog::{BackendFactory, Catalog};
use crate::live::{self, LiveSession, Registry};
use crate::report::fias_report;

pub struct AppState {
    pub catalog: Catalog,
    pub store: TranscriptStore,
    /// Called once per class so scripted state is never shared.
    pub backend: BackendFactory,
    pub session_defaults: SessionConfig,
    pub token: Option<String>,
    pub live: Registry,
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(what: &str, id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"type": "error", "code": self.code, "message": self.message});
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = match &e {
            StoreError::UnknownSession(_) | StoreError::InvalidId(_) => (StatusCode::NOT_FOUND, "not_found"),
            StoreError::NotClosed(_) => (StatusCode::CONFLICT, "session_running"),
            StoreError::AlreadyAttached(_) => (StatusCode::CONFLICT, "already_submitted"),
            StoreError::Exists(_) => (StatusCode::CONFLICT, "exists"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "store_failure"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_submission", e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/courses", get(list_courses))
        .route("/courses/{id}", get(get_course))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/stream", get(stream))
        .route("/sessions/{id}/survey", post(submit_survey))
        .route("/sessions/{id}/quiz", post(submit_quiz))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/analysis/fias", get(analysis_fias))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<Shared>, req: Request, next: Next) -> Response {
    let Some(token) = state.token.as_deref() else {
        return next.run(req).await;
    };
    let from_header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    // Browsers cannot set headers on a WebSocket upgrade.
    let from_query = req
        .uri()
        .query()
        .and_then(|q| q.split('&').find_map(|kv| kv.strip_prefix("token=")));
    if from_header == Some(token) || from_query == Some(token) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

async fn list_courses(State(state): State<Shared>) -> impl IntoResponse {
    Json(state.catalog.summaries())
}

async fn get_course(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let course = state.catalog.course(&id).ok_or_else(|| ApiError::not_found("course", &id))?;
    Ok(Json(&*course).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct SessionQuery {
    course_id: Option<String>,
    setting: Option<Ablation>,
}

async fn list_sessions(
    State(state): State<Shared>,
    Query(q): Query<SessionQuery>,
) -> ApiResult<Json<Vec<SessionSummary>>> {
    let filter = SessionFilter {
        course_id: q.course_id,
        setting: q.setting,
    };
    Ok(Json(state.store.list_sessions(&filter)?))
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub course_id: String,
    #[serde(default)]
    pub ablation: Ablation,
    /// Agent specs replacing default-roster entries with the same id.
    #[serde(default)]
    pub roster: Option<Vec<AgentSpec>>,
    #[serde(default)]
    pub config: Option<SessionConfig>,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionHandle {
    pub session_id: String,
    pub stream: String,
    pub created_at: DateTime<Utc>,
    pub phase: Phase,
}

fn new_session_id(course_id: &str, ablation: Ablation) -> String {
    let now = Utc::now();
    format!(
        "{course_id}-{ablation}-{}-{:03}",
        now.format("%Y%m%dT%H%M%S"),
        now.timestamp_subsec_millis()
    )
}

async fn create_session(State(state): State<Shared>, Json(req): Json<CreateSession>) -> ApiResult<Response> {
    let course = state
        .catalog
        .course(&req.course_id)
        .ok_or_else(|| ApiError::not_found("course", &req.course_id))?;
    let invalid = |e: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e);
    let mut roster = default_roster();
    if let Some(overrides) = req.roster {
        roster = roster.merge_overrides(overrides).map_err(|e| invalid(e.to_string()))?;
    }
    let roster = apply_ablation(&roster, req.ablation);
    let config = req.config.unwrap_or_else(|| state.session_defaults.clone());
    config.validate().map_err(invalid)?;
    let session_id = req
        .session_id
        .unwrap_or_else(|| new_session_id(&course.id, req.ablation));
    state.store.path_of(&session_id)?;
    if state.store.contains(&session_id) {
        return Err(StoreError::Exists(session_id).into());
    }

    let setup = SessionSetup::new(session_id.clone(), course, roster, config);
    let backend = (state.backend)().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "backend_failure", e.to_string()))?;
    let store = state.store.clone();
    let launched = tokio::task::spawn_blocking(move || -> ApiResult<LiveSession> {
        let session = ClassroomSession::new(setup, backend, Box::new(SystemClock)).map_err(|e| invalid(e.to_string()))?;
        let writer = store.create(&session.header())?;
        live::launch(session, writer).map_err(|e| {
            ApiError::new(StatusCode::BAD_GATEWAY, e.code(), format!("class failed to start: {e}"))
        })
    })
    .await
    .map_err(ApiError::internal)??;
    let handle = SessionHandle {
        session_id: session_id.clone(),
        stream: format!("/sessions/{session_id}/stream"),
        created_at: launched.created_at,
        phase: launched.phase(),
    };
    state.live.insert(launched);
    log::info!("session {session_id} started");
    Ok((StatusCode::CREATED, Json(handle)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ClientFrame {
    UserUtterance { text: String },
}

fn event_frame(e: &SessionEvent) -> Message {
    Message::Text(serde_json::to_string(e).expect("events serialize").into())
}

fn error_frame(code: &str, message: impl std::fmt::Display) -> Message {
    let v = json!({"type": "error", "code": code, "message": message.to_string()});
    Message::Text(v.to_string().into())
}

async fn stream(State(state): State<Shared>, Path(id): Path<String>, ws: WebSocketUpgrade) -> ApiResult<Response> {
    if let Some(live) = state.live.get(&id) {
        return Ok(ws.on_upgrade(move |socket| stream_live(socket, live)));
    }
    let record = state.store.load_session(&id)?;
    Ok(ws.on_upgrade(move |mut socket| async move {
        for e in &record.events {
            if socket.send(event_frame(e)).await.is_err() {
                return;
            }
        }
        if !record.is_closed() {
            let _ = socket
                .send(error_frame("session_not_live", "session is not running on this server"))
                .await;
        }
        let _ = socket.send(Message::Close(None)).await;
    }))
}

/// Sends `events` past `last_sent` in order. Returns false once the terminal
/// event went out or the socket is gone.
async fn forward(socket: &mut WebSocket, events: &[SessionEvent], last_sent: &mut u64) -> bool {
    for e in events {
        if e.seq <= *last_sent {
            continue;
        }
        if socket.send(event_frame(e)).await.is_err() {
            return false;
        }
        *last_sent = e.seq;
        if e.is_terminal() {
            return false;
        }
    }
    true
}

async fn stream_live(mut socket: WebSocket, live: LiveSession) {
    let sub = live.subscribe();
    let mut rx = sub.live;
    let mut last_sent = 0u64;
    if !forward(&mut socket, &sub.backlog, &mut last_sent).await {
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    loop {
        tokio::select! {
            incoming = rx.recv() => {
                let events = match incoming {
                    Ok(e) => vec![e],
                    // Fell behind the channel: refill from the log.
                    Err(RecvError::Lagged(_)) => live.events_since(last_sent),
                    Err(RecvError::Closed) => break,
                };
                if !forward(&mut socket, &events, &mut last_sent).await {
                    break;
                }
            }
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                let reply = match serde_json::from_str::<ClientFrame>(&text) {
                    Ok(ClientFrame::UserUtterance { text }) => live.say(text).await.err().map(|e| error_frame(e.code(), e)),
                    Err(e) => Some(error_frame("malformed_message", e)),
                };
                if let Some(frame) = reply {
                    if socket.send(frame).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

#[derive(Debug, Deserialize)]
pub struct SurveySubmission {
    #[serde(default)]
    pub participant_id: Option<String>,
    pub cognitive: u8,
    pub teaching: u8,
    pub social: u8,
}

/// Survey and quiz go through the session's writer while it is live, and
/// through a fresh writer otherwise.
fn attach(state: &AppState, id: &str, line: StoreLine) -> ApiResult<()> {
    match state.live.get(id) {
        Some(live) => live.attach(line)?,
        None => match line {
            StoreLine::Survey(s) => state.store.attach_survey(id, s)?,
            StoreLine::Quiz(q) => state.store.attach_quiz(id, q)?,
            _ => unreachable!("only survey and quiz are attached"),
        },
    }
    Ok(())
}

fn participant(given: Option<String>, id: &str) -> String {
    given.unwrap_or_else(|| format!("{id}:user"))
}

/// Course of a session that is ready for submissions; 409 while it is still running.
fn submittable(state: &AppState, id: &str) -> ApiResult<String> {
    let (course_id, phase) = match state.live.get(id) {
        Some(live) => {
            let r = live.record();
            (r.header.course_id.clone(), r.phase())
        }
        None => {
            let r = state.store.load_session(id)?;
            (r.header.course_id.clone(), r.phase())
        }
    };
    if !matches!(phase, Phase::Closing | Phase::Closed) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "session_running",
            format!("submissions open when the class ends (phase is {phase:?})"),
        ));
    }
    Ok(course_id)
}

async fn submit_survey(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<SurveySubmission>,
) -> ApiResult<Json<serde_json::Value>> {
    submittable(&state, &id)?;
    let response = SurveyResponse::new(participant(body.participant_id, &id), body.cognitive, body.teaching, body.social)?;
    attach(&state, &id, StoreLine::Survey(response.clone()))?;
    Ok(Json(json!({"session_id": id, "stored": true, "survey": response})))
}

#[derive(Debug, Deserialize)]
pub struct QuizSubmission {
    #[serde(default)]
    pub participant_id: Option<String>,
    pub answers: QuizAnswers,
}

async fn submit_quiz(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<QuizSubmission>,
) -> ApiResult<Json<QuizResult>> {
    let course_id = submittable(&state, &id)?;
    let quiz = state.catalog.quiz(&course_id).ok_or_else(|| ApiError::not_found("quiz for course", &course_id))?;
    let result = score_quiz(&participant(body.participant_id, &id), &body.answers, &quiz.key())?;
    attach(&state, &id, StoreLine::Quiz(result.clone()))?;
    Ok(Json(result))
}

async fn transcript(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    // The file is authoritative: it also holds submissions made by earlier runs.
    let record = state.store.load_session(&id)?;
    Ok(Json(record).into_response())
}

#[derive(Debug, Deserialize)]
pub struct FiasQuery {
    ids: String,
}

async fn analysis_fias(State(state): State<Shared>, Query(q): Query<FiasQuery>) -> ApiResult<Json<FiasReport>> {
    let ids: BTreeSet<&str> = q.ids.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if ids.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "ids is empty"));
    }
    let mut records = Vec::with_capacity(ids.len());
    for id in ids {
        records.push(state.store.load_session(id)?);
    }
    let report = fias_report(&records)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "analysis_failed", e.to_string()))?;
    Ok(Json(report))
}
