//! HTTP/JSON API over the session store.
//!
//! Writes to one session are serialized by a per-session lock and run on
//! the blocking pool; reads are served from the last committed record and
//! never wait for a running computation.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex as StdMutex, RwLock};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kohdesign::design_loop::{predictive_band, PredictiveBand};
use kohdesign::metrics::MetricReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{oneshot, Mutex};

use crate::error::{ErrorBody, Result, ServiceError};
use crate::session::{now_ms, CreateSession, Session, SessionRecord};
use crate::setup::SCHEMA_VERSION;
use crate::store::Store;

/// Largest grid accepted by the predictive endpoint.
pub const MAX_GRID_POINTS: usize = 5000;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(self.body())).into_response()
    }
}

struct Handle {
    view: RwLock<Arc<SessionRecord>>,
    work: Arc<Mutex<Session>>,
}

impl Handle {
    fn new(session: Session) -> Self {
        Self { view: RwLock::new(Arc::new(session.record.clone())), work: Arc::new(Mutex::new(session)) }
    }

    fn view(&self) -> Arc<SessionRecord> {
        self.view.read().expect("view lock poisoned").clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

/// Status of an asynchronous suggest or observe call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub session_id: String,
    pub kind: String,
    pub status: JobState,
    pub created_at_ms: u64,
    pub finished_at_ms: Option<u64>,
    pub result: Option<Value>,
    pub error: Option<ErrorBody>,
}

struct Inner {
    store: Store,
    sessions: StdMutex<HashMap<String, Arc<Handle>>>,
    jobs: StdMutex<HashMap<String, JobStatus>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        Self { inner: Arc::new(Inner { store, sessions: StdMutex::default(), jobs: StdMutex::default() }) }
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>> {
        if let Some(h) = self.inner.sessions.lock().expect("session map poisoned").get(id) {
            return Ok(h.clone());
        }
        let record = self.inner.store.load(id)?.ok_or_else(|| ServiceError::NotFound { what: "session", id: id.to_string() })?;
        let h = Arc::new(Handle::new(Session::from_record(record)?));
        let mut map = self.inner.sessions.lock().expect("session map poisoned");
        Ok(map.entry(id.to_string()).or_insert(h).clone())
    }

    /// Runs `f` under the session's write lock on the blocking pool, then
    /// persists the record and publishes it to readers.
    async fn write<T, F>(&self, h: Arc<Handle>, f: F) -> Result<T>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T> + Send + 'static,
    {
        let mut guard = h.work.clone().lock_owned().await;
        let store = self.inner.store.clone();
        tokio::task::spawn_blocking(move || {
            let out = f(&mut guard)?;
            store.save(&guard.record)?;
            *h.view.write().expect("view lock poisoned") = Arc::new(guard.record.clone());
            Ok(out)
        })
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
    }

    fn job_status(&self, session_id: &str, job_id: &str) -> Result<JobStatus> {
        let jobs = self.inner.jobs.lock().expect("job map poisoned");
        match jobs.get(job_id) {
            Some(j) if j.session_id == session_id => Ok(j.clone()),
            _ => Err(ServiceError::NotFound { what: "job", id: job_id.to_string() }),
        }
    }

    /// Starts `f` as a background job and returns its initial status.
    fn spawn_job<T, F>(&self, h: Arc<Handle>, session_id: String, kind: &str, f: F) -> JobStatus
    where
        T: Serialize + Send + 'static,
        F: FnOnce(&mut Session) -> Result<T> + Send + 'static,
    {
        let job = JobStatus {
            job_id: uuid::Uuid::new_v4().to_string(),
            session_id,
            kind: kind.to_string(),
            status: JobState::Running,
            created_at_ms: now_ms(),
            finished_at_ms: None,
            result: None,
            error: None,
        };
        self.inner.jobs.lock().expect("job map poisoned").insert(job.job_id.clone(), job.clone());
        let app = self.clone();
        let id = job.job_id.clone();
        tokio::spawn(async move {
            let out = app.write(h, f).await.and_then(|v| Ok(serde_json::to_value(v)?));
            let mut jobs = app.inner.jobs.lock().expect("job map poisoned");
            if let Some(j) = jobs.get_mut(&id) {
                j.finished_at_ms = Some(now_ms());
                match out {
                    Ok(v) => {
                        j.status = JobState::Done;
                        j.result = Some(v);
                    }
                    Err(e) => {
                        j.status = JobState::Failed;
                        j.error = Some(e.body());
                    }
                }
            }
        });
        job
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::InvalidBody { message: format!("invalid request body: {e}"), detail: json!({ "line": e.line(), "column": e.column() }) })
}

fn parse_optional_body<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse_body(body)
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestBody {
    alpha: Option<f64>,
    #[serde(default, rename = "async")]
    run_async: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObserveBody {
    candidate_index: usize,
    #[serde(default)]
    y_new: Option<Vec<f64>>,
    #[serde(default, rename = "async")]
    run_async: bool,
}

#[derive(Debug, Deserialize)]
struct PredictiveQuery {
    grid: Option<String>,
}

#[derive(Serialize)]
struct SessionListEntry {
    session_id: String,
    round: usize,
    updated_at_ms: u64,
}

#[derive(Serialize)]
struct MetricsView {
    session_id: String,
    round: usize,
    metrics: Vec<MetricReport>,
}

/// Parses `a,b,c` (one design input) or `a1,a2;b1,b2` (several).
pub fn parse_grid(text: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    let bad = |m: String| ServiceError::InvalidBody { message: m, detail: json!({ "grid": text }) };
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(format!("invalid grid value '{s}'")));
    let grid: Vec<Vec<f64>> = if dim == 1 {
        text.split([',', ';']).map(|s| num(s).map(|v| vec![v])).collect::<Result<_>>()?
    } else {
        text.split(';').map(|pt| pt.split(',').map(num).collect::<Result<Vec<f64>>>()).collect::<Result<_>>()?
    };
    if let Some(x) = grid.iter().find(|x| x.len() != dim) {
        return Err(bad(format!("grid point has {} coordinates, expected {dim}", x.len())));
    }
    if grid.len() > MAX_GRID_POINTS {
        return Err(bad(format!("grid has {} points, limit is {MAX_GRID_POINTS}", grid.len())));
    }
    Ok(grid)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "schema_version": SCHEMA_VERSION }))
}

async fn list_sessions(State(app): State<AppState>) -> Result<Json<Vec<SessionListEntry>>> {
    let mut out = Vec::new();
    for id in app.inner.store.list()? {
        let r = app.handle(&id)?.view();
        out.push(SessionListEntry { session_id: id, round: r.round, updated_at_ms: r.updated_at_ms });
    }
    Ok(Json(out))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Response> {
    let req: CreateSession = parse_body(&body)?;
    let id = uuid::Uuid::new_v4().to_string();
    let store = app.inner.store.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<Session> {
        let s = Session::create(id, req)?;
        store.save(&s.record)?;
        Ok(s)
    })
    .await
    .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))??;
    let h = Arc::new(Handle::new(session));
    let view = h.view();
    app.inner.sessions.lock().expect("session map poisoned").insert(view.session_id.clone(), h);
    let location = format!("/sessions/{}", view.session_id);
    Ok((StatusCode::CREATED, [(header::LOCATION, location)], Json(view)).into_response())
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Arc<SessionRecord>>> {
    Ok(Json(app.handle(&id)?.view()))
}

fn accepted(job: JobStatus) -> Response {
    let location = format!("/sessions/{}/jobs/{}", job.session_id, job.job_id);
    (StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(job)).into_response()
}

async fn suggest(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response> {
    let req: SuggestBody = parse_optional_body(&body)?;
    let h = app.handle(&id)?;
    let alpha = req.alpha;
    if req.run_async {
        return Ok(accepted(app.spawn_job(h, id, "suggest", move |s| s.suggest(alpha))));
    }
    Ok(Json(app.write(h, move |s| s.suggest(alpha)).await?).into_response())
}

async fn observe(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response> {
    let req: ObserveBody = parse_body(&body)?;
    let h = app.handle(&id)?;
    let (c, y) = (req.candidate_index, req.y_new);
    if req.run_async {
        return Ok(accepted(app.spawn_job(h, id, "observe", move |s| s.observe(c, y))));
    }
    Ok(Json(app.write(h, move |s| s.observe(c, y)).await?).into_response())
}

async fn predictive(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: std::result::Result<Query<PredictiveQuery>, QueryRejection>,
) -> Result<Json<PredictiveBand>> {
    let Query(q) = query.map_err(|e| ServiceError::invalid(e.body_text()))?;
    let r = app.handle(&id)?.view();
    let grid = q.grid.map(|g| parse_grid(&g, r.model.data.design_dim())).transpose()?;
    let band = tokio::task::spawn_blocking(move || predictive_band(&r.model, &r.pending_points(), grid))
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))??;
    Ok(Json(band))
}

async fn metrics(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>> {
    let r = app.handle(&id)?.view();
    let view = MetricsView { session_id: r.session_id.clone(), round: r.round, metrics: r.metrics.clone() };
    Ok(Json(serde_json::to_value(view)?))
}

async fn job(State(app): State<AppState>, Path((id, job)): Path<(String, String)>) -> Result<Json<JobStatus>> {
    app.handle(&id)?;
    Ok(Json(app.job_status(&id, &job)?))
}

async fn not_found() -> ServiceError {
    ServiceError::NotFound { what: "route", id: String::new() }
}

async fn method_not_allowed() -> Response {
    let body = ErrorBody { code: "method_not_allowed".into(), message: "method not allowed".into(), detail: Value::Null };
    (StatusCode::METHOD_NOT_ALLOWED, Json(body)).into_response()
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/suggest", post(suggest))
        .route("/sessions/{id}/observe", post(observe))
        .route("/sessions/{id}/predictive", get(predictive))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/jobs/{job}", get(job))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(app)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}

/// A service running on its own thread and runtime.
pub struct Server {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl Server {
    /// Binds `bind` (port 0 picks a free port) and serves sessions stored
    /// in `store`.
    pub fn start(bind: &str, store: Store) -> Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(bind))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(serve(listener, AppState::new(store), async {
                rx.await.ok();
            }))
        });
        Ok(Self { addr, stop: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(tx) = self.stop.take() {
            tx.send(()).ok();
        }
        if let Some(t) = self.thread.take() {
            t.join().ok();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}
