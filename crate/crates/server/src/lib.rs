//! HTTP/JSON facade over the evaluation pipeline.

pub mod registry;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sqleval_core::datastore::Catalog;
use sqleval_core::gateway::{AdapterKind, ModelAdapter};
use sqleval_core::metrics::Metric;
use sqleval_core::pipeline::{
    augment_from_run, list_runs, load_run, runs_by_workload_version, AugmentJob, AugmentJobError,
    RunConfig, RunStoreError, WallClock,
};
use sqleval_core::reporting::{plot_model_comparison, plot_scaling, plot_workload_versions, PlotError, PlotKind};
use sqleval_core::workload::WorkloadStore;
use tower_http::cors::CorsLayer;

pub use registry::{Progress, Registry, RunState, RunStatus};

pub const MAX_LONG_POLL: Duration = Duration::from_secs(30);

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<Registry>,
}

impl AppState {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        AppState {
            registry: Registry::start(workdir.into()),
        }
    }

    fn workdir(&self) -> &Path {
        &self.registry.workdir
    }
}

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
    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", m)
    }
    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", m)
    }
    fn conflict(m: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", m)
    }
    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

impl From<RunStoreError> for ApiError {
    fn from(e: RunStoreError) -> Self {
        match e {
            RunStoreError::NotFound(_) => ApiError::not_found(e.to_string()),
            RunStoreError::Exists(_) => ApiError::conflict(e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_all_runs))
        .route("/runs/{id}/status", get(run_status))
        .route("/runs/{id}/logs", get(run_logs))
        .route("/runs/{id}/report", get(run_report))
        .route("/runs/{id}/plots/{kind}/{metric}", get(run_plot))
        .route("/workloads", get(workloads))
        .route("/workloads/{id}/augment", post(augment))
        .route("/catalog", get(catalog))
        .route("/models", get(models))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves `static_dir` (built dashboard assets) under `/ui` when given.
pub fn app(state: AppState, static_dir: Option<&Path>) -> Router {
    let r = router(state);
    match static_dir {
        Some(d) => r.nest_service("/ui", tower_http::services::ServeDir::new(d)),
        None => r,
    }
}

pub async fn serve(addr: SocketAddr, workdir: PathBuf, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let state = AppState::new(workdir);
    let registry = state.registry.clone();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "api listening");
    axum::serve(listener, app(state, static_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    registry.shutdown();
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))
}

async fn create_run(State(st): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?;
    let cfg = RunConfig::from_str(text, None).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let run_id = sqleval_core::pipeline::run::resolve_run_id(&cfg);
    let on_disk = sqleval_core::pipeline::persist::run_dir(st.workdir(), &run_id).exists();
    if st.registry.contains(&run_id) || on_disk {
        return Err(ApiError::conflict(format!("run `{run_id}` already exists")));
    }
    st.registry.enqueue(run_id.clone(), cfg);
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))))
}

fn disk_status(workdir: &Path, run_id: &str) -> ApiResult<RunStatus> {
    let run = load_run(workdir, run_id)?;
    let wall: WallClock = run.wall.unwrap_or_default();
    let n = run.records.len() as u64;
    Ok(RunStatus {
        run_id: run.run_id,
        state: RunState::Completed,
        progress: Progress { completed: n, total: n },
        started_at: Some(wall.started_at),
        finished_at: Some(wall.finished_at),
        error: None,
    })
}

fn status_of(st: &AppState, run_id: &str) -> ApiResult<RunStatus> {
    match st.registry.status(run_id) {
        Some(s) => Ok(s),
        None => disk_status(st.workdir(), run_id),
    }
}

async fn list_all_runs(State(st): State<AppState>) -> ApiResult<Json<Vec<RunStatus>>> {
    blocking(move || {
        let mut out = st.registry.statuses();
        for id in list_runs(st.workdir())? {
            if !out.iter().any(|s| s.run_id == id) {
                out.push(disk_status(st.workdir(), &id)?);
            }
        }
        out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(Json(out))
    })
    .await?
}

async fn run_status(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RunStatus>> {
    blocking(move || status_of(&st, &id).map(Json)).await?
}

#[derive(Deserialize)]
struct LogQuery {
    #[serde(default)]
    after: u64,
    /// Long-poll budget; capped at 30 s.
    #[serde(default)]
    wait_ms: Option<u64>,
}

async fn run_logs(State(st): State<AppState>, UrlPath(id): UrlPath<String>, Query(q): Query<LogQuery>) -> ApiResult<Response> {
    let wait = Duration::from_millis(q.wait_ms.unwrap_or(10_000)).min(MAX_LONG_POLL);
    let body = blocking(move || -> ApiResult<String> {
        let events = match st.registry.log(&id) {
            Some(log) => log.after(q.after, wait),
            None => load_run(st.workdir(), &id)?.logs.into_iter().filter(|e| e.seq > q.after).collect(),
        };
        Ok(sqleval_core::pipeline::log::events_to_ndjson(&events))
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

fn require_finished(st: &AppState, id: &str) -> ApiResult<()> {
    match st.registry.status(id) {
        Some(s) if s.state == RunState::Failed => Err(ApiError::conflict(format!(
            "run `{id}` failed: {}",
            s.error.unwrap_or_default()
        ))),
        Some(s) if !s.state.is_finished() => Err(ApiError::conflict(format!("run `{id}` is not complete"))),
        _ => Ok(()),
    }
}

async fn run_report(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let text = blocking(move || -> ApiResult<String> {
        require_finished(&st, &id)?;
        Ok(load_run(st.workdir(), &id)?.report_text)
    })
    .await??;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn run_plot(
    State(st): State<AppState>,
    UrlPath((id, kind, metric)): UrlPath<(String, String, String)>,
) -> ApiResult<Json<sqleval_core::reporting::PlotSpec>> {
    let kind: PlotKind = kind.parse().map_err(ApiError::not_found)?;
    let metric: Metric = metric.parse().map_err(ApiError::not_found)?;
    blocking(move || {
        require_finished(&st, &id)?;
        let run = load_run(st.workdir(), &id)?;
        let spec = match kind {
            PlotKind::ModelComparison => plot_model_comparison(&[&run.report], metric),
            PlotKind::Scaling => plot_scaling(&run.report, metric),
            PlotKind::WorkloadVersions => {
                let wid = run.config.workload.id.clone().ok_or_else(|| {
                    ApiError::not_found("run did not use a stored workload; no version history")
                })?;
                let runs = runs_by_workload_version(st.workdir(), &wid)?;
                let keyed: Vec<(u32, &sqleval_core::pipeline::RunReport)> = runs.iter().map(|(v, r)| (*v, &r.report)).collect();
                plot_workload_versions(&keyed, metric)
            }
        };
        spec.map(Json).map_err(|e| match e {
            PlotError::MissingMetric(_) | PlotError::Empty => ApiError::not_found(e.to_string()),
        })
    })
    .await?
}

async fn workloads(State(st): State<AppState>) -> ApiResult<Json<serde_json::Value>> {
    blocking(move || {
        let store = WorkloadStore::new(st.workdir().join("workloads"));
        let list = store.list().map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(Json(serde_json::to_value(list).expect("workload metas serialize")))
    })
    .await?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AugmentBody {
    run_id: String,
    threshold: f64,
    per_subcat: usize,
    #[serde(default)]
    metric: Option<Metric>,
    #[serde(default)]
    min_support: Option<usize>,
    #[serde(default)]
    model: Option<String>,
    #[serde(default)]
    generator: Option<ModelAdapter>,
    #[serde(default)]
    seed: Option<u64>,
}

async fn augment(
    State(st): State<AppState>,
    UrlPath(workload_id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let b: AugmentBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    blocking(move || {
        if let Some(s) = st.registry.status(&b.run_id) {
            if !s.state.is_finished() {
                return Err(ApiError::conflict(format!("run `{}` is not complete", b.run_id)));
            }
        }
        let run = load_run(st.workdir(), &b.run_id)?;
        if run.config.workload.id.as_deref() != Some(workload_id.as_str()) {
            return Err(ApiError::bad_request(format!("run `{}` did not evaluate workload `{workload_id}`", b.run_id)));
        }
        let mut job = AugmentJob::new(&b.run_id, b.threshold, b.per_subcat);
        if let Some(m) = b.metric {
            job.metric = m;
        }
        if let Some(m) = b.min_support {
            job.min_support = m;
        }
        job.model = b.model;
        if let Some(g) = b.generator {
            job.generator = g;
        }
        job.seed = b.seed.unwrap_or(run.config.seed);
        match augment_from_run(st.workdir(), &job) {
            Ok(summary) => Ok((StatusCode::ACCEPTED, Json(serde_json::to_value(summary).expect("summary serializes")))),
            Err(e @ (AugmentJobError::Invalid(_) | AugmentJobError::NoWeakSubcategories(_))) => {
                Err(ApiError::bad_request(e.to_string()))
            }
            Err(AugmentJobError::Run(e)) => Err(e.into()),
            Err(e) => Err(ApiError::internal(e.to_string())),
        }
    })
    .await?
}

#[derive(Serialize)]
struct CatalogItem {
    db_id: String,
    engine: String,
    tables: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

async fn catalog(State(st): State<AppState>) -> ApiResult<Json<Vec<CatalogItem>>> {
    blocking(move || {
        let path = st.workdir().join("catalog.json");
        let cat = Catalog::load(&path).map_err(|e| ApiError::internal(e.to_string()))?;
        let items = cat
            .databases
            .iter()
            .map(|(id, entry)| {
                let opened = cat.open(id);
                CatalogItem {
                    db_id: id.clone(),
                    engine: serde_json::to_value(entry.engine).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                    tables: opened.as_ref().map(|d| d.schema.tables.iter().map(|t| t.name.clone()).collect()).unwrap_or_default(),
                    error: opened.err().map(|e| e.to_string()),
                }
            })
            .collect();
        Ok(Json(items))
    })
    .await?
}

async fn models() -> Json<serde_json::Value> {
    let llm = std::env::var(sqleval_core::gateway::http::BASE_URL_ENV).is_ok();
    let kinds = [
        (AdapterKind::MockOracle, "returns the ground truth", true, json!({})),
        (AdapterKind::MockMutant, "ground truth with a fixed mutation", true, json!({"mutation": ["swap_first_two_select_columns", "drop_order_by"]})),
        (AdapterKind::MockTemplate, "known-valid augmentation pairs", true, json!({})),
        (AdapterKind::DirectLlm, "chat-completion LLM prompted with schema and question", llm, json!({"llm_id": "string", "temperature": "number", "icl_examples": "integer"})),
        (AdapterKind::ExternalHttp, "external text-to-SQL service", true, json!({"endpoint": "url"})),
    ];
    Json(json!(kinds
        .iter()
        .map(|(k, d, avail, settings)| json!({"kind": k, "description": d, "available": avail, "settings": settings}))
        .collect::<Vec<_>>()))
}

