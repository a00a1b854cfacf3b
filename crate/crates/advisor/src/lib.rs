//! JSON-over-HTTP advisor for interactive frontier exploration.
//!
//! An operator creates a session from an instance and a model, reads the
//! ranked frontier, records each observed label and repeats. Endpoints:
//!
//! - `POST /sessions` with `{"instance": …, "model": …, "beta": …}`
//! - `GET /sessions/{id}`
//! - `POST /sessions/{id}/observations` with `{"node", "label", "expected_revision"}`
//! - `POST /sessions/{id}/undo`
//! - `GET /sessions/{id}/trace` (JSON lines)
//!
//! Errors are `{"code", "message"}` with status 400 (malformed request),
//! 404 (unknown session), 409 (stale revision) or 422 (rejected input).
//! When a log directory is configured, every session appends its
//! observations to `<dir>/<id>.jsonl` and is rebuilt from it on restart.

pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub use session::{CreateRequest, Session, SessionError, View};

/// Environment variable holding the bind address.
pub const ADDR_ENV: &str = "AFEG_ADVISOR_ADDR";
/// Environment variable holding the session log directory.
pub const LOG_DIR_ENV: &str = "AFEG_ADVISOR_LOG_DIR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.to_owned(), message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no session {id:?}"))
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, code) = match &e {
            SessionError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_session"),
            SessionError::NotInFrontier(_) => (StatusCode::UNPROCESSABLE_ENTITY, "not_in_frontier"),
            SessionError::UnknownNode(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_node"),
            SessionError::InvalidLabel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_label"),
            SessionError::RevisionConflict { .. } => (StatusCode::CONFLICT, "revision_conflict"),
            SessionError::NothingToUndo => (StatusCode::UNPROCESSABLE_ENTITY, "nothing_to_undo"),
            SessionError::Log { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "log_failure"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Every live session. Each session has its own lock, so sessions never
/// wait on each other and writes to one session are serialised.
#[derive(Default)]
pub struct Advisor {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    log_dir: Option<PathBuf>,
}

impl Advisor {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Advisor logging to `dir`, with every session found there recovered.
    pub fn with_log_dir(dir: PathBuf) -> Result<Self, SessionError> {
        let log_err = |e: std::io::Error| SessionError::Log { path: dir.display().to_string(), message: e.to_string() };
        std::fs::create_dir_all(&dir).map_err(log_err)?;
        let mut sessions = HashMap::new();
        let mut max_id = 0;
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(log_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let session = Session::recover(&path)?;
            if let Some(n) = session.id().strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            log::info!("recovered session {} at revision {}", session.id(), session.revision());
            sessions.insert(session.id().to_owned(), Arc::new(Mutex::new(session)));
        }
        Ok(Self { sessions: RwLock::new(sessions), next_id: AtomicU64::new(max_id), log_dir: Some(dir) })
    }

    /// Advisor configured from [`LOG_DIR_ENV`], in memory when unset.
    pub fn from_env() -> Result<Self, SessionError> {
        match std::env::var_os(LOG_DIR_ENV) {
            Some(dir) => Self::with_log_dir(PathBuf::from(dir)),
            None => Ok(Self::in_memory()),
        }
    }

    pub fn create(&self, request: CreateRequest) -> Result<View, SessionError> {
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed) + 1);
        let session = match &self.log_dir {
            Some(dir) => Session::create_logged(id.clone(), request, dir)?,
            None => Session::create(id.clone(), request)?,
        };
        let view = session.view();
        self.sessions.write().expect("session map lock").insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn session(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.read().expect("session map lock").get(id).cloned()
    }

    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, SessionError>,
    ) -> Result<T, ApiError> {
        let session = self.session(id).ok_or_else(|| ApiError::not_found(id))?;
        let mut guard = session.lock().expect("session lock");
        f(&mut guard).map_err(ApiError::from)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRequest {
    node: String,
    label: u64,
    expected_revision: u64,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

/// Runs blocking session work (index computation, exact inference) off the
/// async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn create_session(State(advisor): State<Arc<Advisor>>, body: Bytes) -> Result<Response, ApiError> {
    let request: CreateRequest = parse_body(&body)?;
    let view = blocking(move || advisor.create(request).map_err(ApiError::from)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_view(State(advisor): State<Arc<Advisor>>, Path(id): Path<String>) -> Result<Json<View>, ApiError> {
    blocking(move || advisor.with_session(&id, |s| Ok(s.view()))).await.map(Json)
}

async fn record_observation(
    State(advisor): State<Arc<Advisor>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<View>, ApiError> {
    if advisor.session(&id).is_none() {
        return Err(ApiError::not_found(&id));
    }
    let request: ObservationRequest = parse_body(&body)?;
    blocking(move || {
        advisor.with_session(&id, |s| s.observe(&request.node, request.label, request.expected_revision))
    })
    .await
    .map(Json)
}

async fn undo(State(advisor): State<Arc<Advisor>>, Path(id): Path<String>) -> Result<Json<View>, ApiError> {
    blocking(move || advisor.with_session(&id, Session::undo)).await.map(Json)
}

async fn trace(State(advisor): State<Arc<Advisor>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let records = blocking(move || advisor.with_session(&id, |s| Ok(s.trace()))).await?;
    let mut body = Vec::new();
    afeg::formats::write_trace(&mut body, &records)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(advisor: Arc<Advisor>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_view))
        .route("/sessions/{id}/observations", post(record_observation))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(advisor)
}

/// Bind address from [`ADDR_ENV`], or [`DEFAULT_ADDR`].
pub fn addr_from_env() -> Result<SocketAddr, std::net::AddrParseError> {
    std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_owned()).parse()
}

/// Serves the advisor until the process is stopped.
pub async fn serve(addr: SocketAddr, advisor: Arc<Advisor>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("advisor listening on {}", listener.local_addr()?);
    axum::serve(listener, router(advisor)).await
}
