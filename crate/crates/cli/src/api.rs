//! HTTP review API under `/api/v1`. Reads are open; every mutation needs a
//! bearer token from the static session list in the serve config.

use crate::commands::{annotation_job, generation_job};
use crate::workspace::{split_list, Workspace};
use anyhow::{bail, Context as _, Result};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use taxoscope_core::agreement::{cohen_for_runs, fleiss_for_runs, pairwise_matrix, AgreementError};
use taxoscope_core::annotation::AnnotationRun;
use taxoscope_core::gates::{gate_report_key, GateReport, SpotCheckTask};
use taxoscope_core::review::{ReviewError, ReviewService, TaskFilter, TaskKind, TaskResult, TaskState};
use taxoscope_core::store::StoreError;
use taxoscope_core::taxonomy::{Taxonomy, TaxonomyRef};

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "TAXOSCOPE_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// Serve config (JSON): sessions and an optional provider config path.
    #[arg(long, env = "TAXOSCOPE_SERVE_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Review,
    Jobs,
}

/// One configured session. The token itself is read from `token_env`.
#[derive(Debug, Clone, Deserialize)]
pub struct SessionConfig {
    pub assessor: String,
    pub token_env: String,
    #[serde(default = "default_capabilities")]
    pub capabilities: BTreeSet<Capability>,
}

fn default_capabilities() -> BTreeSet<Capability> {
    [Capability::Review].into()
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ServeConfig {
    #[serde(default)]
    pub sessions: Vec<SessionConfig>,
    /// Provider config used by background jobs.
    #[serde(default)]
    pub provider: Option<PathBuf>,
}

#[derive(Clone)]
pub struct ApiSession {
    token: String,
    pub assessor: String,
    pub capabilities: BTreeSet<Capability>,
}

impl std::fmt::Debug for ApiSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ApiSession")
            .field("assessor", &self.assessor)
            .field("capabilities", &self.capabilities)
            .finish_non_exhaustive()
    }
}

impl ApiSession {
    pub fn new(token: impl Into<String>, assessor: impl Into<String>, capabilities: &[Capability]) -> Self {
        Self {
            token: token.into(),
            assessor: assessor.into(),
            capabilities: capabilities.iter().copied().collect(),
        }
    }
}

impl ServeConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading serve config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing serve config {}", path.display()))
    }

    /// Resolves every session token from the environment.
    pub fn sessions(&self) -> Result<Vec<ApiSession>> {
        self.sessions
            .iter()
            .map(|s| match std::env::var(&s.token_env) {
                Ok(token) if !token.is_empty() => Ok(ApiSession {
                    token,
                    assessor: s.assessor.clone(),
                    capabilities: s.capabilities.clone(),
                }),
                _ => bail!("token variable {} for assessor {:?} is not set", s.token_env, s.assessor),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub kind: String,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobRequest {
    Annotate {
        dataset: String,
        /// `id@version`.
        #[serde(deserialize_with = "taxonomy_ref")]
        taxonomy: TaxonomyRef,
        #[serde(default = "default_slice")]
        slice: String,
    },
    Generate {
        dataset: String,
        #[serde(default = "default_runs")]
        runs: usize,
        #[serde(default = "default_fraction")]
        fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn taxonomy_ref<'de, D: serde::Deserializer<'de>>(d: D) -> Result<TaxonomyRef, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

fn default_slice() -> String {
    "test".into()
}

fn default_runs() -> usize {
    10
}

fn default_fraction() -> f64 {
    0.8
}

pub struct AppState {
    ws: Workspace,
    review: ReviewService,
    sessions: Vec<ApiSession>,
    provider: Option<PathBuf>,
    jobs: Mutex<BTreeMap<String, JobStatus>>,
}

impl AppState {
    pub fn new(ws: Workspace, sessions: Vec<ApiSession>, provider: Option<PathBuf>) -> Result<Arc<Self>> {
        let review = ReviewService::open(ws.store.clone(), ws.clock.clone())?;
        Ok(Arc::new(Self {
            ws,
            review,
            sessions,
            provider,
            jobs: Mutex::new(BTreeMap::new()),
        }))
    }

    fn authorize(&self, headers: &HeaderMap, need: Capability) -> Result<&ApiSession, ApiError> {
        let token = headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))?;
        let session = self
            .sessions
            .iter()
            .find(|s| s.token == token)
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown token"))?;
        if !session.capabilities.contains(&need) {
            return Err(ApiError::new(StatusCode::FORBIDDEN, format!("session lacks {need:?} capability")));
        }
        Ok(session)
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
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            _ if e.is_invalid_input() => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::UnknownTask(_) => StatusCode::NOT_FOUND,
            ReviewError::Conflict { .. } | ReviewError::AlreadyDone(_) => StatusCode::CONFLICT,
            ReviewError::Store(StoreError::NotFound { .. }) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/claim", post(claim_task))
        .route("/tasks/{id}/submit", post(submit_task))
        .route("/taxonomies/{id}/{version}", get(get_taxonomy))
        .route("/runs/{id}", get(get_run))
        .route("/agreement", get(agreement))
        .route("/gates/{id}", get(get_gates))
        .route("/spot-checks/{id}", get(get_spot_check))
        .route("/jobs", post(start_job))
        .route("/jobs/{id}", get(get_job));
    Router::new().nest("/api/v1", v1).with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    state: Option<TaskState>,
    kind: Option<TaskKind>,
}

async fn list_tasks(State(s): State<Arc<AppState>>, Query(q): Query<TaskQuery>) -> ApiResult<Vec<taxoscope_core::review::ReviewTask>> {
    Ok(Json(s.review.list(TaskFilter {
        state: q.state,
        kind: q.kind,
    })))
}

async fn get_task(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<taxoscope_core::review::ReviewTask> {
    s.review
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown task {id}")))
}

async fn claim_task(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<taxoscope_core::review::ReviewTask> {
    let assessor = s.authorize(&headers, Capability::Review)?.assessor.clone();
    let state = s.clone();
    let task = tokio::task::spawn_blocking(move || state.review.claim(&id, &assessor))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(task))
}

async fn submit_task(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> ApiResult<taxoscope_core::review::ReviewTask> {
    let assessor = s.authorize(&headers, Capability::Review)?.assessor.clone();
    let result: TaskResult = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed result: {e}")))?;
    let state = s.clone();
    let task = tokio::task::spawn_blocking(move || state.review.submit(&id, &assessor, result))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(task))
}

async fn get_taxonomy(State(s): State<Arc<AppState>>, Path((id, version)): Path<(String, u32)>) -> ApiResult<Taxonomy> {
    Ok(Json(s.ws.store.get(&TaxonomyRef::new(id, version).store_key())?))
}

async fn get_run(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<AnnotationRun> {
    Ok(Json(AnnotationRun::load(&s.ws.store, &id)?))
}

#[derive(Debug, Deserialize)]
struct AgreementQuery {
    runs: String,
}

/// Two runs: Cohen's kappa with its confusion matrix. More: Fleiss' kappa
/// plus the pairwise Cohen table.
async fn agreement(State(s): State<Arc<AppState>>, Query(q): Query<AgreementQuery>) -> ApiResult<Value> {
    let ids = split_list(&q.runs);
    if ids.len() < 2 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "runs needs at least two ids"));
    }
    let runs = ids
        .iter()
        .map(|id| AnnotationRun::load(&s.ws.store, id))
        .collect::<Result<Vec<_>, _>>()?;
    if runs.len() == 2 {
        let (m, report) = cohen_for_runs(&runs[0], &runs[1])?;
        return Ok(Json(json!({ "report": report, "matrix": m })));
    }
    let refs: Vec<&AnnotationRun> = runs.iter().collect();
    Ok(Json(json!({
        "report": fleiss_for_runs(&refs)?,
        "pairwise": pairwise_matrix(&refs)?,
    })))
}

async fn get_gates(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<GateReport> {
    Ok(Json(s.ws.store.get(&gate_report_key(&id))?))
}

async fn get_spot_check(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SpotCheckTask> {
    Ok(Json(SpotCheckTask::load(&s.ws.store, &id)?))
}

async fn start_job(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    s.authorize(&headers, Capability::Jobs)?;
    let request: JobRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed job: {e}")))?;
    let provider = s
        .provider
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no provider configured for jobs"))?;
    let job_id = s.ws.store.allocate_id("job");
    let kind = match &request {
        JobRequest::Annotate { .. } => "annotate",
        JobRequest::Generate { .. } => "generate",
    };
    let status = JobStatus {
        job_id: job_id.clone(),
        kind: kind.into(),
        state: JobState::Running,
        result: None,
        error: None,
    };
    s.jobs.lock().expect("job table poisoned").insert(job_id.clone(), status.clone());
    let state = s.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = match request {
            JobRequest::Annotate { dataset, taxonomy, slice } => {
                annotation_job(&state.ws, &provider, &dataset, &taxonomy, &slice).map(|r| json!({ "run_id": r.run_id }))
            }
            JobRequest::Generate {
                dataset,
                runs,
                fraction,
                seed,
            } => generation_job(&state.ws, &provider, &dataset, runs, fraction, seed).map(|ids| json!({ "run_ids": ids })),
        };
        let mut jobs = state.jobs.lock().expect("job table poisoned");
        let entry = jobs.get_mut(&job_id).expect("job registered");
        match outcome {
            Ok(v) => {
                entry.state = JobState::Succeeded;
                entry.result = Some(v);
            }
            Err(e) => {
                tracing::warn!(job = %job_id, error = %format!("{e:#}"), "job failed");
                entry.state = JobState::Failed;
                entry.error = Some(format!("{e:#}"));
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn get_job(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<JobStatus> {
    s.jobs
        .lock()
        .expect("job table poisoned")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}

pub fn serve_blocking(ws: Workspace, args: ServeArgs) -> Result<()> {
    let config = match &args.config {
        Some(p) => ServeConfig::load(p)?,
        None => ServeConfig::default(),
    };
    let sessions = config.sessions()?;
    if sessions.is_empty() {
        tracing::warn!("no sessions configured; every mutating endpoint will refuse requests");
    }
    let state = AppState::new(ws, sessions, config.provider.clone())?;
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .with_context(|| format!("binding {}", args.bind))?;
        tracing::info!(addr = %listener.local_addr()?, "review API listening");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving review API")
    })
}
