//! Routes, handlers and the JSON shapes they exchange. Every response body,
//! errors included, carries `"v": 1`.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use hitl_core::backends::{BackendDescriptor, LexicalZeroShot, ZeroShot};
use hitl_core::corpus::partition;
use hitl_core::session::create_session;
use hitl_core::{AnnotationSource, DataFormat, Error as CoreError, LabelSchema, RoundMetrics, SessionConfig, SessionState};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, OwnedMutexGuard};

use crate::error::{Result, ServiceError};
use crate::events::{self, ColdStartRow, Event, EventLog, Recording, LOG_VERSION};
use crate::store::{self, Dataset, DatasetInfo};

pub const API_VERSION: u32 = 1;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    data_dir: PathBuf,
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

struct SessionSlot {
    dataset: String,
    created_at: DateTime<Utc>,
    /// Last committed state; readers clone the `Arc` and never wait on a
    /// mutation.
    committed: RwLock<Arc<SessionState>>,
    mutation: Arc<Mutex<()>>,
    log: EventLog,
}

impl SessionSlot {
    fn snapshot(&self) -> Arc<SessionState> {
        self.committed.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn commit(&self, state: SessionState) {
        *self.committed.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(state);
    }
}

impl AppState {
    /// Opens `data_dir`, replaying every session log under `sessions/`.
    /// Logs that fail to replay are reported and skipped.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(sessions_dir(&data_dir))?;
        std::fs::create_dir_all(store::datasets_dir(&data_dir))?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(sessions_dir(&data_dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            match events::replay(&path).and_then(|r| events::repair(&path, r.valid_len).map(|()| r)) {
                Ok(r) => {
                    log::info!("replayed session {} at round {}", r.state.session_id, r.state.round());
                    let slot = SessionSlot {
                        dataset: r.dataset,
                        created_at: r.created_at,
                        committed: RwLock::new(Arc::new(r.state)),
                        mutation: Arc::new(Mutex::new(())),
                        log: EventLog::open(&path),
                    };
                    sessions.insert(slot.snapshot().session_id.clone(), Arc::new(slot));
                }
                Err(e) => log::error!("skipping session log: {e}"),
            }
        }
        Ok(Self {
            inner: Arc::new(Inner {
                data_dir,
                datasets: RwLock::new(HashMap::new()),
                sessions: RwLock::new(sessions),
            }),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.inner.data_dir
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Takes the session's mutation slot if it is free. While the guard is
    /// held, submissions to the session answer 409.
    pub fn try_lock_session(&self, id: &str) -> Option<OwnedMutexGuard<()>> {
        self.slot(id)?.mutation.clone().try_lock_owned().ok()
    }

    fn slot(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.inner.sessions.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    fn dataset(&self, name: &str) -> Result<Option<Arc<Dataset>>> {
        if let Some(d) = self.inner.datasets.read().unwrap_or_else(|p| p.into_inner()).get(name) {
            return Ok(Some(d.clone()));
        }
        let Some(d) = store::load(&self.inner.data_dir, name)? else {
            return Ok(None);
        };
        let d = Arc::new(d);
        self.inner
            .datasets
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(name.to_string(), d.clone());
        Ok(Some(d))
    }
}

pub fn sessions_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("sessions")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/datasets", get(list_datasets).post(upload_dataset))
        .route("/sessions", get(list_sessions).post(create))
        .route("/sessions/{id}", get(summary))
        .route("/sessions/{id}/batch", get(batch))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/export", get(export))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
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

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("unknown {what} `{id}`"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        log::error!("{e}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    v: u32,
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { v: API_VERSION, error: self.code, message: &self.message };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

#[derive(Serialize)]
struct Health {
    v: u32,
    status: &'static str,
}

async fn health() -> Json<Health> {
    Json(Health { v: API_VERSION, status: "ok" })
}

// ---- datasets ----

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UploadRequest {
    name: String,
    format: String,
    train: String,
    #[serde(default)]
    test: Option<String>,
    /// Omitted: inferred from the data.
    #[serde(default)]
    labels: Option<Vec<String>>,
}

#[derive(Serialize)]
struct DatasetResponse {
    v: u32,
    #[serde(flatten)]
    info: DatasetInfo,
}

#[derive(Serialize)]
struct DatasetList {
    v: u32,
    datasets: Vec<DatasetInfo>,
}

async fn upload_dataset(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<DatasetResponse>)> {
    let req: UploadRequest = parse_body(&body)?;
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, "invalid_dataset", m);
    store::validate_name(&req.name).map_err(|e| bad(e.to_string()))?;
    let format: DataFormat = req.format.parse().map_err(|e: CoreError| bad(e.to_string()))?;
    let schema = req
        .labels
        .map(LabelSchema::new)
        .transpose()
        .map_err(|e| bad(e.to_string()))?;
    let (train, test, schema) = store::read_dataset(req.train.as_bytes(), req.test.as_deref().map(str::as_bytes), format, schema)
        .map_err(|e| bad(e.to_string()))?;
    let ds = Dataset { name: req.name, schema, train, test };
    let data_dir = app.inner.data_dir.clone();
    let ds = blocking(move || store::save(&data_dir, &ds).map(|_| ds)).await?.map_err(|e| match e {
        ServiceError::DatasetExists(_) => ApiError::new(StatusCode::CONFLICT, "dataset_exists", e.to_string()),
        other => ApiError::internal(other),
    })?;
    let info = ds.info();
    app.inner
        .datasets
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(ds.name.clone(), Arc::new(ds));
    Ok((StatusCode::CREATED, Json(DatasetResponse { v: API_VERSION, info })))
}

async fn list_datasets(State(app): State<AppState>) -> ApiResult<Json<DatasetList>> {
    let names = store::list(app.data_dir()).map_err(ApiError::internal)?;
    let mut datasets = Vec::with_capacity(names.len());
    for n in names {
        match app.dataset(&n) {
            Ok(Some(d)) => datasets.push(d.info()),
            Ok(None) => {}
            Err(e) => log::warn!("dataset `{n}`: {e}"),
        }
    }
    Ok(Json(DatasetList { v: API_VERSION, datasets }))
}

// ---- sessions ----

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum ColdStartSpec {
    Lexical { hints: HashMap<String, Vec<String>> },
    Backend(BackendDescriptor),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    dataset: String,
    #[serde(default)]
    config: SessionConfig,
    /// Share of labeled training rows held out for evaluation when the
    /// dataset has no test split.
    #[serde(default = "default_eval_fraction")]
    eval_fraction: f64,
    #[serde(default)]
    split_seed: Option<u64>,
    #[serde(default)]
    cold_start: Option<ColdStartSpec>,
}

fn default_eval_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize)]
pub struct HeadlineMetrics {
    pub n_labels: usize,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub v: u32,
    pub session_id: String,
    pub dataset: String,
    pub created_at: DateTime<Utc>,
    pub round: usize,
    pub labels_used: usize,
    pub budget: usize,
    pub budget_remaining: usize,
    pub batch_size: usize,
    pub strategy: String,
    pub protocol: String,
    pub labels: Vec<String>,
    pub cold_start: bool,
    pub metrics: HeadlineMetrics,
}

fn summarize(slot: &SessionSlot) -> SessionSummary {
    let s = slot.snapshot();
    let last = s.curve().last().expect("curve is never empty");
    SessionSummary {
        v: API_VERSION,
        session_id: s.session_id.clone(),
        dataset: slot.dataset.clone(),
        created_at: slot.created_at,
        round: s.round(),
        labels_used: s.labels_used(),
        budget: s.config().max_labels,
        budget_remaining: s.budget_remaining(),
        batch_size: s.config().batch_size,
        strategy: s.config().strategy.to_string(),
        protocol: s.config().protocol.to_string(),
        labels: s.schema().labels().to_vec(),
        cold_start: s.has_cold_start(),
        metrics: HeadlineMetrics {
            n_labels: last.n_labels,
            accuracy: last.accuracy,
            precision_macro: last.precision_macro,
            recall_macro: last.recall_macro,
        },
    }
}

async fn create(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<SessionSummary>)> {
    let req: CreateRequest = parse_body(&body)?;
    let bad = |e: &dyn std::fmt::Display| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", e.to_string());
    req.config.validate().map_err(|e| bad(&e))?;
    let ds = app
        .dataset(&req.dataset)
        .map_err(ApiError::internal)?
        .ok_or_else(|| ApiError::not_found("dataset", &req.dataset))?;

    let dataset_name = ds.name.clone();
    let session_id = uuid::Uuid::new_v4().to_string();
    let log_path = sessions_dir(app.data_dir()).join(format!("{session_id}.jsonl"));
    let id = session_id.clone();
    let built = blocking(move || -> ApiResult<(SessionState, EventLog, DateTime<Utc>)> {
        let split_seed = req.split_seed.unwrap_or(req.config.seed);
        let (pool, eval) = partition(&ds.train, ds.test.as_deref(), req.eval_fraction, split_seed).map_err(|e| bad(&e))?;
        let mut state = create_session(id.clone(), &pool, &eval, &ds.schema, req.config).map_err(|e| bad(&e))?;
        let cold_start = match &req.cold_start {
            None => None,
            Some(spec) => {
                let predictor: Box<dyn ZeroShot> = match spec {
                    ColdStartSpec::Lexical { hints } => {
                        Box::new(LexicalZeroShot::new(&ds.schema, hints).map_err(|e| bad(&e))?)
                    }
                    ColdStartSpec::Backend(b) => Box::new(b.clone()),
                };
                let rec = Recording::new(predictor.as_ref());
                match state.attach_cold_start(&rec) {
                    Ok(()) => Some(rec.into_rows()),
                    Err(e) => {
                        log::warn!("session {id}: cold start failed, keeping the zero model: {e}");
                        None
                    }
                }
            }
        };
        let created_at = Utc::now();
        let event = Event::Created {
            v: LOG_VERSION,
            session_id: id,
            dataset: ds.name.clone(),
            created_at,
            config: req.config,
            labels: ds.schema.labels().to_vec(),
            pool: if req.config.protocol == hitl_core::Protocol::PoolProtocol { pool } else { Vec::new() },
            eval,
            cold_start: cold_start.map(dedup_rows),
        };
        let log = EventLog::create(&log_path, &event).map_err(ApiError::internal)?;
        Ok((state, log, created_at))
    })
    .await??;

    let (state, log, created_at) = built;
    let slot = Arc::new(SessionSlot {
        dataset: dataset_name,
        created_at,
        committed: RwLock::new(Arc::new(state)),
        mutation: Arc::new(Mutex::new(())),
        log,
    });
    let summary = summarize(&slot);
    app.inner
        .sessions
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(session_id, slot);
    Ok((StatusCode::CREATED, Json(summary)))
}

/// Duplicate texts carry identical predictions; keep one row per text.
fn dedup_rows(rows: Vec<ColdStartRow>) -> Vec<ColdStartRow> {
    let mut seen = HashSet::new();
    rows.into_iter().filter(|r| seen.insert(r.text.clone())).collect()
}

#[derive(Serialize)]
struct SessionList {
    v: u32,
    sessions: Vec<SessionSummary>,
}

async fn list_sessions(State(app): State<AppState>) -> Json<SessionList> {
    let sessions = app.session_ids().iter().filter_map(|id| app.slot(id)).map(|s| summarize(&s)).collect();
    Json(SessionList { v: API_VERSION, sessions })
}

fn find(app: &AppState, id: &str) -> ApiResult<Arc<SessionSlot>> {
    app.slot(id).ok_or_else(|| ApiError::not_found("session", id))
}

async fn summary(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    let slot = find(&app, &id)?;
    Ok(Json(summarize(&slot)))
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchItem {
    pub doc_id: String,
    pub text: String,
    pub probs: Vec<f64>,
    pub predicted: usize,
    pub predicted_label: String,
    pub confidence: f64,
    pub entropy: f64,
    pub entropy_norm: f64,
}

#[derive(Serialize)]
struct BatchResponse {
    v: u32,
    session_id: String,
    round: usize,
    items: Vec<BatchItem>,
}

fn exhausted(e: &CoreError) -> Option<ApiError> {
    match e {
        CoreError::BudgetExhausted(_) => Some(ApiError::new(StatusCode::CONFLICT, "budget_exhausted", e.to_string())),
        CoreError::PoolExhausted => Some(ApiError::new(StatusCode::CONFLICT, "pool_exhausted", e.to_string())),
        _ => None,
    }
}

async fn batch(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<BatchResponse>> {
    let state = find(&app, &id)?.snapshot();
    let items = blocking(move || -> ApiResult<BatchResponse> {
        let batch = state.next_batch().map_err(|e| exhausted(&e).unwrap_or_else(|| ApiError::internal(e)))?;
        let schema = state.schema();
        let items = batch
            .into_iter()
            .map(|(d, p)| BatchItem {
                doc_id: d.doc_id,
                text: d.text,
                predicted_label: schema.name(p.predicted).unwrap_or_default().to_string(),
                probs: p.probs,
                predicted: p.predicted,
                confidence: p.confidence,
                entropy: p.entropy_nats,
                entropy_norm: p.entropy_norm,
            })
            .collect();
        Ok(BatchResponse {
            v: API_VERSION,
            session_id: state.session_id.clone(),
            round: state.round(),
            items,
        })
    })
    .await??;
    Ok(Json(items))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelRef {
    Index(usize),
    Name(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationIn {
    doc_id: String,
    label: LabelRef,
}

#[derive(Serialize)]
struct RoundResponse {
    v: u32,
    session_id: String,
    round: usize,
    #[serde(flatten)]
    metrics: RoundMetrics,
}

fn unprocessable(code: &'static str, message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
}

async fn annotate(State(app): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<RoundResponse>> {
    let slot = find(&app, &id)?;
    let Ok(_guard) = slot.mutation.clone().try_lock_owned() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "busy", "another submission for this session is in flight"));
    };
    let items: Vec<AnnotationIn> = parse_body(&body)?;
    let state = slot.snapshot();

    let next = blocking(move || -> ApiResult<SessionState> {
        let batch = state.next_batch().map_err(|e| exhausted(&e).unwrap_or_else(|| ApiError::internal(e)))?;
        let in_batch: HashSet<&str> = batch.iter().map(|(d, _)| d.doc_id.as_str()).collect();
        let mut pairs = Vec::with_capacity(items.len());
        for a in &items {
            if !in_batch.contains(a.doc_id.as_str()) {
                let code = if state.document(&a.doc_id).is_some() { "not_in_batch" } else { "unknown_doc" };
                return Err(unprocessable(code, format!("`{}` is not in the current batch", a.doc_id)));
            }
            let label = match &a.label {
                LabelRef::Index(i) if *i < state.schema().len() => *i,
                LabelRef::Index(i) => return Err(unprocessable("unknown_label", format!("label index {i} out of range"))),
                LabelRef::Name(n) => state
                    .schema()
                    .index_of(n)
                    .ok_or_else(|| unprocessable("unknown_label", format!("unknown label `{n}`")))?,
            };
            pairs.push((a.doc_id.clone(), label));
        }
        let mut next = (*state).clone();
        next.submit_annotations(&pairs, AnnotationSource::Human, Utc::now())
            .map_err(|e| exhausted(&e).unwrap_or_else(|| unprocessable("invalid_annotations", e.to_string())))?;
        Ok(next)
    })
    .await??;

    let events = events::round_events(&next);
    let log_slot = slot.clone();
    blocking(move || log_slot.log.append(&events)).await?.map_err(ApiError::internal)?;
    let resp = RoundResponse {
        v: API_VERSION,
        session_id: next.session_id.clone(),
        round: next.round(),
        metrics: next.curve().last().expect("curve is never empty").clone(),
    };
    slot.commit(next);
    Ok(Json(resp))
}

#[derive(Serialize)]
struct MetricsResponse {
    v: u32,
    session_id: String,
    curve: Vec<RoundMetrics>,
    pool_entropy: Vec<f64>,
}

async fn metrics(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<MetricsResponse>> {
    let s = find(&app, &id)?.snapshot();
    Ok(Json(MetricsResponse {
        v: API_VERSION,
        session_id: s.session_id.clone(),
        curve: s.curve().rounds().to_vec(),
        pool_entropy: s.pool_entropy_history().to_vec(),
    }))
}

/// Model, vocabulary, annotation history and curve of one session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportBundle {
    pub v: u32,
    pub session_id: String,
    pub dataset: String,
    pub model: serde_json::Value,
    pub vocabulary: serde_json::Value,
    pub annotations_jsonl: String,
    pub curve: Vec<RoundMetrics>,
}

impl ExportBundle {
    pub fn from_state(state: &SessionState, dataset: &str) -> Result<Self> {
        let mut annotations = Vec::new();
        state.write_annotations_jsonl(&mut annotations)?;
        Ok(Self {
            v: API_VERSION,
            session_id: state.session_id.clone(),
            dataset: dataset.to_string(),
            model: serde_json::from_str(&state.model().to_json())?,
            vocabulary: serde_json::from_str(&state.vocabulary().to_json())?,
            annotations_jsonl: String::from_utf8(annotations).expect("serde_json writes UTF-8"),
            curve: state.curve().rounds().to_vec(),
        })
    }
}

async fn export(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ExportBundle>> {
    let slot = find(&app, &id)?;
    let state = slot.snapshot();
    let bundle = blocking(move || ExportBundle::from_state(&state, &slot.dataset)).await?.map_err(ApiError::internal)?;
    Ok(Json(bundle))
}
