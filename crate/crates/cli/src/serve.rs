//! `ltf serve`: the human-participant protocol over JSON/HTTP.
//!
//! Every session lives in `<dir>/<session_id>.jsonl`; the open round's
//! joins and submissions are mirrored to `<session_id>.open.json`, so a
//! restarted server picks up exactly where it stopped.

use std::collections::HashMap;
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ltf_core::market::FeedbackType;
use ltf_core::session::{
    HumanError, HumanSession, OpenRoundSnapshot, ParticipantView, RoundResult, SessionConfig, SessionError,
    SessionSummary, SubmitOutcome,
};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::{watch, RwLock};

use crate::files::{check_session_id, collect_transcripts, write_atomic};

/// Longest a result poll may block.
pub const MAX_WAIT_MS: u64 = 30_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<HumanError> for ApiError {
    fn from(e: HumanError) -> Self {
        let (status, code) = match &e {
            HumanError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            HumanError::Duplicate { .. } => (StatusCode::CONFLICT, "duplicate"),
            HumanError::StaleRound { .. } => (StatusCode::CONFLICT, "stale_round"),
            HumanError::RoundNotOpen { .. } => (StatusCode::CONFLICT, "round_not_open"),
            HumanError::NotHumanSlot(_) => (StatusCode::NOT_FOUND, "not_human_slot"),
            HumanError::SlotTaken(_) => (StatusCode::CONFLICT, "slot_taken"),
            HumanError::NoFreeSlot => (StatusCode::CONFLICT, "no_free_slot"),
            HumanError::Closed(_) => (StatusCode::GONE, "closed"),
            HumanError::Engine(SessionError::Config { .. }) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
            HumanError::Engine(_) => (StatusCode::INTERNAL_SERVER_ERROR, "engine"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes, empty_ok: bool) -> ApiResult<Option<T>> {
    if body.iter().all(u8::is_ascii_whitespace) {
        if empty_ok {
            return Ok(None);
        }
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "request body is empty"));
    }
    serde_json::from_slice(body)
        .map(Some)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

struct Hosted {
    session: Mutex<HumanSession>,
    /// Number of closed rounds.
    progress: watch::Sender<usize>,
    snapshot_path: PathBuf,
}

impl Hosted {
    fn new(session: HumanSession, snapshot_path: PathBuf) -> Self {
        let (progress, _) = watch::channel(session.engine().state().current_round);
        Self {
            session: Mutex::new(session),
            progress,
            snapshot_path,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HumanSession> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn persist(&self, session: &HumanSession) -> Result<()> {
        let text = serde_json::to_vec_pretty(&session.snapshot())?;
        write_atomic(&self.snapshot_path, &text)
    }
}

/// Sessions hosted by one server process.
pub struct ServerState {
    dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Hosted>>>,
}

fn snapshot_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.open.json"))
}

fn transcript_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.jsonl"))
}

impl ServerState {
    /// Loads every transcript in `dir` that has human slots.
    pub fn open(dir: &Path) -> Result<Arc<Self>> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut sessions = HashMap::new();
        for path in collect_transcripts(&[dir.to_path_buf()])? {
            let Some(header) = crate::files::peek_header(&path)? else { continue };
            let humans = header["config"]["agents"]
                .as_array()
                .is_some_and(|a| a.iter().any(|x| x["kind"] == "human"));
            if !humans {
                continue;
            }
            let mut session =
                HumanSession::resume(&path).with_context(|| format!("cannot resume {}", path.display()))?;
            let id = session.config().session_id.clone();
            let snap = snapshot_path(dir, &id);
            if snap.exists() {
                let text = std::fs::read(&snap).with_context(|| format!("cannot read {}", snap.display()))?;
                let snapshot: OpenRoundSnapshot =
                    serde_json::from_slice(&text).with_context(|| format!("unreadable {}", snap.display()))?;
                session.restore(&snapshot).with_context(|| format!("cannot restore {}", snap.display()))?;
            }
            log::info!("resumed session {id} at round {}", session.engine().open_round());
            sessions.insert(id, Arc::new(Hosted::new(session, snap)));
        }
        Ok(Arc::new(Self {
            dir: dir.to_path_buf(),
            sessions: RwLock::new(sessions),
        }))
    }

    pub async fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().await.keys().cloned().collect();
        ids.sort();
        ids
    }

    async fn get(&self, id: &str) -> ApiResult<Arc<Hosted>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// Creates a session unless one with that id is already hosted.
    pub async fn create(&self, config: SessionConfig) -> ApiResult<CreatedSession> {
        check_session_id(&config.session_id)
            .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()))?;
        if !config.has_human_slots() {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_config",
                "config has no human slots; run it with `ltf run`",
            ));
        }
        let mut sessions = self.sessions.write().await;
        let id = config.session_id.clone();
        let path = transcript_path(&self.dir, &id);
        if sessions.contains_key(&id) || path.exists() {
            return Err(ApiError::new(StatusCode::CONFLICT, "exists", format!("session {id:?} already exists")));
        }
        let snap = snapshot_path(&self.dir, &id);
        let created = tokio::task::spawn_blocking(move || HumanSession::create(config, Some(&path)))
            .await
            .map_err(ApiError::internal)??;
        let out = CreatedSession {
            session_id: id.clone(),
            rounds: created.config().rounds,
            human_slots: created.config().human_slots(),
            transcript: format!("{id}.jsonl"),
        };
        sessions.insert(id, Arc::new(Hosted::new(created, snap)));
        Ok(out)
    }

    /// Writes every open-round snapshot; called on shutdown.
    pub async fn persist_all(&self) -> Result<()> {
        for (id, hosted) in self.sessions.read().await.iter() {
            let session = hosted.lock();
            hosted.persist(&session).with_context(|| format!("session {id}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub rounds: usize,
    pub human_slots: Vec<usize>,
    pub transcript: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct JoinRequest {
    #[serde(default)]
    slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joined {
    pub session_id: String,
    pub agent: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub round: usize,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instructions {
    pub session_id: String,
    pub feedback: FeedbackType,
    pub rounds: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingResult {
    pub status: String,
    pub round: usize,
}

#[derive(Debug, Deserialize)]
struct WaitQuery {
    #[serde(default)]
    wait_ms: Option<u64>,
}

async fn create_session(State(state): State<Arc<ServerState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let text = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))?;
    let config = SessionConfig::from_json(text).map_err(|e| {
        let status = match e {
            SessionError::Config { ref field, .. } if field == "document" => StatusCode::BAD_REQUEST,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, "invalid_config", e.to_string())
    })?;
    let created = state.create(config).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn list_sessions(State(state): State<Arc<ServerState>>) -> Json<Vec<String>> {
    Json(state.session_ids().await)
}

async fn summary(State(state): State<Arc<ServerState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    let hosted = state.get(&id).await?;
    let s = hosted.lock().summary();
    Ok(Json(s))
}

async fn instructions(
    State(state): State<Arc<ServerState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Instructions>> {
    let hosted = state.get(&id).await?;
    let s = hosted.lock();
    Ok(Json(Instructions {
        session_id: id,
        feedback: s.config().market.feedback,
        rounds: s.config().rounds,
        text: s.instructions(),
    }))
}

async fn join(
    State(state): State<Arc<ServerState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Joined>> {
    let req: JoinRequest = parse_body(&body, true)?.unwrap_or_default();
    let hosted = state.get(&id).await?;
    let mut s = hosted.lock();
    let agent = s.join(req.slot)?;
    hosted.persist(&s).map_err(ApiError::internal)?;
    Ok(Json(Joined { session_id: id, agent }))
}

async fn view(
    State(state): State<Arc<ServerState>>,
    UrlPath((id, agent)): UrlPath<(String, usize)>,
) -> ApiResult<Json<ParticipantView>> {
    let hosted = state.get(&id).await?;
    let v = hosted.lock().view(agent)?;
    Ok(Json(v))
}

async fn submit(
    State(state): State<Arc<ServerState>>,
    UrlPath((id, agent)): UrlPath<(String, usize)>,
    body: Bytes,
) -> ApiResult<Json<SubmitOutcome>> {
    let req: SubmitRequest = parse_body(&body, false)?.expect("non-empty body");
    let hosted = state.get(&id).await?;
    // Closing a round queries the scripted and LLM slots, which can block.
    let outcome = tokio::task::spawn_blocking(move || {
        let mut s = hosted.lock();
        let result = s.submit(agent, req.round, req.value, req.token);
        if result.is_ok() {
            if let Err(e) = hosted.persist(&s) {
                log::error!("session {}: snapshot not written: {e:#}", s.config().session_id);
            }
            hosted.progress.send_replace(s.engine().state().current_round);
        }
        result
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Json(outcome))
}

/// Result of a round, waiting up to `wait_ms` for it to close.
async fn round_result(
    State(state): State<Arc<ServerState>>,
    UrlPath((id, agent, round)): UrlPath<(String, usize, usize)>,
    Query(q): Query<WaitQuery>,
) -> ApiResult<Response> {
    let hosted = state.get(&id).await?;
    let mut progress = hosted.progress.subscribe();
    let lookup = |hosted: &Hosted| -> ApiResult<Option<RoundResult>> {
        let s = hosted.lock();
        let open = s.engine().open_round();
        if round == 0 || round > open || (round == open && s.engine().is_complete()) {
            return Err(HumanError::RoundNotOpen { round, open }.into());
        }
        Ok(s.round_result(agent, round)?)
    };
    if let Some(r) = lookup(&hosted)? {
        return Ok(Json(r).into_response());
    }
    let wait = Duration::from_millis(q.wait_ms.unwrap_or(0).min(MAX_WAIT_MS));
    if !wait.is_zero() {
        let _ = tokio::time::timeout(wait, progress.wait_for(|&closed| closed >= round)).await;
        if let Some(r) = lookup(&hosted)? {
            return Ok(Json(r).into_response());
        }
    }
    let pending = PendingResult {
        status: "pending".into(),
        round,
    };
    Ok((StatusCode::ACCEPTED, Json(pending)).into_response())
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/instructions", get(instructions))
        .route("/sessions/{id}/join", post(join))
        .route("/sessions/{id}/agents/{agent}/view", get(view))
        .route("/sessions/{id}/agents/{agent}/forecasts", post(submit))
        .route("/sessions/{id}/agents/{agent}/rounds/{round}", get(round_result))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then writes the open-round snapshots.
pub async fn serve(listener: TcpListener, state: Arc<ServerState>, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<()> {
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown)
        .await
        .context("server failed")?;
    state.persist_all().await?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub addr: String,
    pub dir: PathBuf,
    /// Session to create at startup unless it already exists.
    pub config: Option<PathBuf>,
}

/// Entry point of `ltf serve`: binds, hosts, and stops on Ctrl-C.
pub async fn run(opts: ServeOptions) -> Result<()> {
    let state = ServerState::open(&opts.dir)?;
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let config = SessionConfig::from_json(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let id = config.session_id.clone();
        if state.sessions.read().await.contains_key(&id) {
            log::info!("session {id} already hosted; not recreating it");
        } else {
            state.create(config).await.map_err(|e| anyhow::anyhow!("{}: {}", e.code, e.message))?;
            log::info!("created session {id}");
        }
    }
    let listener = TcpListener::bind(&opts.addr)
        .await
        .with_context(|| format!("cannot listen on {}", opts.addr))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    serve(listener, state, async {
        let _ = tokio::signal::ctrl_c().await;
        eprintln!("shutting down");
    })
    .await
}
