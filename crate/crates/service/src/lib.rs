//! HTTP API over a run store, versioned under `/api/v1/`.
//!
//! Every response is read from the run directories on disk, so restarting the
//! server loses nothing. Mutations (creating a run, posting a review) go through
//! the engine, which holds the run's file lock while it writes. After a mutation
//! the server keeps driving the run in a background task until it completes,
//! fails or waits for the next review.
//!
//! There is no authentication. The default bind address is loopback.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gforge_core::guidelines::{diff, GuidelineDoc, StoreError};
use gforge_core::moderation::classify_report_factors;
use gforge_engine::{Engine, EngineError, ReviewRequest, RunConfig, RunStatus, RunStore};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

pub const DEFAULT_BIND: &str = "127.0.0.1:8731";

#[derive(Debug, Clone)]
pub struct ApiSession {
    pub bind: SocketAddr,
    pub store_root: PathBuf,
    /// Reject every mutating endpoint with 403.
    pub read_only: bool,
    /// Built console assets served at `/`.
    pub assets: Option<PathBuf>,
    /// Keep driving runs in the background after a mutation.
    pub drive: bool,
}

impl ApiSession {
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        Self {
            bind: DEFAULT_BIND.parse().expect("valid default address"),
            store_root: store_root.into(),
            read_only: false,
            assets: None,
            drive: true,
        }
    }
}

#[derive(Clone)]
struct AppState {
    session: Arc<ApiSession>,
    /// Serializes mutations per run within this process.
    run_locks: Arc<Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>>,
}

impl AppState {
    fn store(&self) -> RunStore {
        RunStore::new(&self.session.store_root)
    }

    fn run_lock(&self, run_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.run_locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(run_id.to_string()).or_default().clone()
    }

    fn spawn_driver(&self, run_id: String) {
        if !self.session.drive {
            return;
        }
        let store = self.store();
        let lock = self.run_lock(&run_id);
        tokio::spawn(async move {
            let _guard = lock.lock().await;
            let id = run_id.clone();
            let result = tokio::task::spawn_blocking(move || Engine::new(store).drive(&id)).await;
            match result {
                Ok(Ok(rec)) => tracing::info!(run_id, status = %rec.status, "driver stopped"),
                Ok(Err(e)) => tracing::warn!(run_id, error = %e, "driver stopped with an error"),
                Err(e) => tracing::error!(run_id, error = %e, "driver task panicked"),
            }
        });
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownRun(_) | EngineError::UnknownIteration(_) => StatusCode::NOT_FOUND,
            EngineError::GuidelineStore(StoreError::UnknownVersion(_)) => StatusCode::NOT_FOUND,
            EngineError::NotAwaitingReview { .. } | EngineError::Busy(_) | EngineError::RunExists(_) => {
                StatusCode::CONFLICT
            }
            EngineError::InvalidRevision(_) | EngineError::Config(_) | EngineError::InvalidRunId(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, EngineError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")))
}

fn require_writable(state: &AppState) -> Result<(), ApiError> {
    if state.session.read_only {
        Err(ApiError::new(StatusCode::FORBIDDEN, "server is read-only"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct RunSummary {
    run_id: String,
    status: RunStatus,
    iterations: usize,
    n_batches: usize,
    gate_trajectory: Vec<f64>,
    gate_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    awaiting_review: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn summary(store: &RunStore, run_id: &str) -> Result<RunSummary, EngineError> {
    let rec = store.record(run_id)?;
    Ok(RunSummary {
        gate_trajectory: rec.gate_trajectory(),
        run_id: rec.run_id,
        status: rec.status,
        iterations: rec.iterations.len(),
        n_batches: rec.n_batches,
        gate_threshold: rec.config.gate_threshold,
        awaiting_review: rec.awaiting_review,
        error: rec.error,
    })
}

async fn list_runs(State(state): State<AppState>) -> ApiResult<Vec<RunSummary>> {
    let store = state.store();
    let runs = blocking(move || {
        store
            .list()?
            .iter()
            .map(|id| summary(&store, id))
            .collect::<Result<Vec<_>, _>>()
    })
    .await?;
    Ok(Json(runs))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRun {
    #[serde(default)]
    run_id: Option<String>,
    /// Inline configuration; relative paths resolve against the server's directory.
    #[serde(default)]
    config: Option<RunConfig>,
    /// Path of a TOML config file readable by the server.
    #[serde(default)]
    config_path: Option<PathBuf>,
}

async fn create_run(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<RunSummary>), ApiError> {
    require_writable(&state)?;
    let req: CreateRun = parse_body(&body)?;
    let store = state.store();
    let created = blocking(move || {
        let config = match (req.config, req.config_path) {
            (Some(c), None) => c,
            (None, Some(p)) => RunConfig::load(&p)?,
            _ => return Err(EngineError::Config("give exactly one of config or config_path".into())),
        };
        let id = Engine::new(store.clone()).create_run(config, req.run_id)?;
        summary(&store, &id)
    })
    .await?;
    state.spawn_driver(created.run_id.clone());
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_run(State(state): State<AppState>, Path(run_id): Path<String>) -> ApiResult<gforge_engine::RunRecord> {
    let store = state.store();
    Ok(Json(blocking(move || store.record(&run_id)).await?))
}

#[derive(Debug, Deserialize)]
struct StatusQuery {
    /// Seconds to wait for the status to differ from `since`.
    wait: Option<f64>,
    since: Option<RunStatus>,
}

async fn run_status(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(q): Query<StatusQuery>,
) -> ApiResult<RunSummary> {
    let deadline = tokio::time::Instant::now() + Duration::from_secs_f64(q.wait.unwrap_or(0.0).clamp(0.0, 60.0));
    loop {
        let store = state.store();
        let id = run_id.clone();
        let s = blocking(move || summary(&store, &id)).await?;
        let changed = q.since.is_none_or(|since| since != s.status);
        if changed || tokio::time::Instant::now() >= deadline {
            return Ok(Json(s));
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

async fn get_iteration(
    State(state): State<AppState>,
    Path((run_id, n)): Path<(String, usize)>,
) -> ApiResult<gforge_engine::IterationResult> {
    let store = state.store();
    let it = blocking(move || {
        let mut its = store.iterations(&run_id)?;
        if n < its.len() {
            Ok(its.swap_remove(n))
        } else {
            Err(EngineError::UnknownIteration(n))
        }
    })
    .await?;
    Ok(Json(it))
}

async fn get_report(State(state): State<AppState>, Path((run_id, n)): Path<(String, usize)>) -> ApiResult<Value> {
    let Json(it) = get_iteration(State(state), Path((run_id, n))).await?;
    let report = it
        .report
        .ok_or_else(|| ApiError::not_found(format!("iteration {n} has no moderation report")))?;
    let factors: Value = match classify_report_factors(&report) {
        Ok(dist) => dist.into_iter().map(|(f, share)| (f.name().to_string(), json!(share))).collect(),
        Err(_) => Value::Null,
    };
    Ok(Json(json!({ "report": report, "factors": factors })))
}

async fn list_guidelines(State(state): State<AppState>, Path(run_id): Path<String>) -> ApiResult<Value> {
    let store = state.store();
    let lineage = blocking(move || {
        store.read_state(&run_id)?;
        Ok(store.guidelines(&run_id)?.lineage().to_vec())
    })
    .await?;
    Ok(Json(json!(lineage)))
}

fn load_version(store: &RunStore, run_id: &str, version: &str) -> Result<GuidelineDoc, EngineError> {
    store.read_state(run_id)?;
    Ok(store.guidelines(run_id)?.load(version)?)
}

async fn get_guideline(State(state): State<AppState>, Path((run_id, version)): Path<(String, String)>) -> ApiResult<Value> {
    let store = state.store();
    let doc = blocking(move || load_version(&store, &run_id, &version)).await?;
    Ok(Json(json!({
        "version_id": doc.version_id(),
        "parent_version": doc.parent_version(),
        "sections": doc.sections(),
        "rendered": doc.render(),
    })))
}

async fn diff_guidelines(
    State(state): State<AppState>,
    Path((run_id, a, b)): Path<(String, String, String)>,
) -> ApiResult<gforge_core::guidelines::GuidelineDiff> {
    let store = state.store();
    let d = blocking(move || {
        let old = load_version(&store, &run_id, &a)?;
        let new = load_version(&store, &run_id, &b)?;
        Ok(diff(&old, &new))
    })
    .await?;
    Ok(Json(d))
}

async fn post_review(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    body: Bytes,
) -> ApiResult<gforge_engine::ReviewResponse> {
    require_writable(&state)?;
    let req: ReviewRequest = parse_body(&body)?;
    let lock = state.run_lock(&run_id);
    let guard = lock.lock().await;
    let store = state.store();
    let id = run_id.clone();
    let resp = blocking(move || Engine::new(store).apply_review(&id, &req)).await?;
    drop(guard);
    if !resp.duplicate {
        state.spawn_driver(run_id);
    }
    Ok(Json(resp))
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(session: ApiSession) -> Router {
    let assets = session.assets.clone();
    let state = AppState {
        session: Arc::new(session),
        run_locks: Arc::default(),
    };
    let api = Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{run_id}", get(get_run))
        .route("/runs/{run_id}/status", get(run_status))
        .route("/runs/{run_id}/iterations/{n}", get(get_iteration))
        .route("/runs/{run_id}/iterations/{n}/report", get(get_report))
        .route("/runs/{run_id}/guidelines", get(list_guidelines))
        .route("/runs/{run_id}/guidelines/{version}", get(get_guideline))
        .route("/runs/{run_id}/guidelines/{a}/diff/{b}", get(diff_guidelines))
        .route("/runs/{run_id}/review", post(post_review))
        .fallback(not_found)
        .with_state(state);
    let app = Router::new().nest("/api/v1", api);
    match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until the process is stopped.
pub async fn serve(session: ApiSession) -> std::io::Result<()> {
    if !session.bind.ip().is_loopback() {
        tracing::warn!(addr = %session.bind, "binding a non-loopback address; the API has no authentication");
    }
    let listener = tokio::net::TcpListener::bind(session.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, root = %session.store_root.display(), "serving");
    axum::serve(listener, router(session)).await
}
