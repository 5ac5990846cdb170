use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::adapters::{ImageInput, ImageMeta};
use crate::app::config::AppConfig;
use crate::app::runtime::Runtime;
use crate::app::AppError;
use crate::domain::{CaseId, DomainError, Embedding, Label, MemoryEntry};
use crate::memory::MemoryError;
use crate::orchestrator::{ReportDocument, StepError};

/// JSON error body `{"error": {"code", "message"}}` with a status.
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

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

fn memory_status(e: &MemoryError) -> (StatusCode, &'static str) {
    match e {
        MemoryError::DuplicateId(_) => (StatusCode::CONFLICT, "duplicate_id"),
        MemoryError::UnknownLabel(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_label"),
        MemoryError::Domain(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_entry"),
        MemoryError::EmptyCategory(_) => (StatusCode::NOT_FOUND, "empty_category"),
        MemoryError::Backend(_) => (StatusCode::BAD_GATEWAY, "backend_failure"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "memory_error"),
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            AppError::Memory(m) => memory_status(m),
            AppError::Pipeline(p) if p.is_backend() => (StatusCode::BAD_GATEWAY, "backend_failure"),
            AppError::Pipeline(p) => match &p.source {
                StepError::Dimension { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "dimension_mismatch"),
                StepError::Memory(m) => memory_status(m),
                _ => (StatusCode::INTERNAL_SERVER_ERROR, "pipeline_error"),
            },
            AppError::Backend(_) => (StatusCode::BAD_GATEWAY, "backend_failure"),
            AppError::Usage(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal_error"),
        };
        ApiError::new(status, code, message)
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, AppError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))?
        .map_err(ApiError::from)
}

fn embedding_from(values: Vec<f64>) -> Result<Embedding, ApiError> {
    Embedding::new(values).map_err(|e: DomainError| ApiError::bad_request(e.to_string()))
}

/// `POST /v1/diagnose` body. Either `image_b64` or `embedding` is required;
/// `meta` carries sidecar metadata for the mock backends.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseRequest {
    pub image_b64: Option<String>,
    pub embedding: Option<Vec<f64>>,
    pub meta: Option<ImageMeta>,
    #[serde(default)]
    pub confirm: bool,
}

impl DiagnoseRequest {
    fn into_image(self) -> Result<(ImageInput, bool), ApiError> {
        let embedding = self.embedding.map(embedding_from).transpose()?;
        let bytes = match (&self.image_b64, &embedding) {
            (Some(b64), _) => base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| ApiError::bad_request(format!("image_b64: {e}")))?,
            (None, Some(e)) => e.values().iter().flat_map(|v| v.to_le_bytes()).collect(),
            (None, None) => return Err(ApiError::bad_request("image_b64 or embedding is required")),
        };
        Ok((
            ImageInput {
                bytes,
                meta: self.meta,
                embedding,
            },
            self.confirm,
        ))
    }
}

async fn diagnose(State(rt): State<Arc<Runtime>>, body: Bytes) -> Result<Response, ApiError> {
    let (image, confirm) = parse_body::<DiagnoseRequest>(&body)?.into_image()?;
    let (json, case_id, evolved) = blocking(move || {
        let d = rt.diagnose(&image)?;
        let json = ReportDocument::new(&d).to_json();
        let mut evolved = None;
        let mut case_id = None;
        if confirm {
            let out = rt.confirm(&image, &d)?;
            case_id = Some(out.case_id);
            evolved = out.evolved.map(|v| format!("{} v{}", v.category, v.version));
        }
        Ok((json, case_id, evolved))
    })
    .await?;
    let mut resp = (
        StatusCode::OK,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        json,
    )
        .into_response();
    let headers = resp.headers_mut();
    if let Some(id) = case_id.and_then(|c| HeaderValue::from_str(c.as_str()).ok()) {
        headers.insert("x-evoderm-case-id", id);
    }
    if let Some(v) = evolved.and_then(|v| HeaderValue::from_str(&v).ok()) {
        headers.insert("x-evoderm-guideline-evolved", v);
    }
    Ok(resp)
}

async fn list_cases(
    State(rt): State<Arc<Runtime>>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let g = rt.store.snapshot();
    let Some(query) = params.get("query") else {
        let ids: Vec<&CaseId> = g.cases().map(|c| &c.id).collect();
        return Ok(Json(json!({"count": ids.len(), "case_ids": ids})).into_response());
    };
    let k = match params.get("k") {
        Some(k) => k
            .parse::<usize>()
            .map_err(|e| ApiError::bad_request(format!("k: {e}")))?,
        None => g.config().top_k,
    };
    let values = query
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::bad_request(format!("query: {e}")))?;
    let q = embedding_from(values)?;
    let hits = g
        .query_similar(&q, k)
        .map_err(|e| ApiError::from(AppError::Memory(e)))?;
    Ok(Json(json!({"hits": hits})).into_response())
}

/// `POST /v1/memory/cases` body.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddCaseRequest {
    pub id: String,
    pub embedding: Vec<f64>,
    pub key_findings: String,
    pub diagnosis: String,
}

async fn add_case(State(rt): State<Arc<Runtime>>, body: Bytes) -> Result<Response, ApiError> {
    let req: AddCaseRequest = parse_body(&body)?;
    let entry = MemoryEntry {
        id: CaseId(req.id),
        embedding: embedding_from(req.embedding)?,
        key_findings: req.key_findings,
        diagnosis: Label::new(req.diagnosis),
        created_at: 0,
    };
    let out = blocking(move || Ok(rt.store.add_case(entry, rt.ports.summarizer.as_ref())?)).await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn evolve(State(rt): State<Arc<Runtime>>, Path(category): Path<String>) -> Result<Response, ApiError> {
    let label = Label::new(category);
    let known = rt.store.snapshot().category(&label).is_some();
    if !known {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_category", format!("no category {label}")));
    }
    let rt2 = rt.clone();
    let l2 = label.clone();
    let v = blocking(move || Ok(rt2.store.maybe_evolve(&l2, rt2.ports.summarizer.as_ref())?)).await?;
    let g = rt.store.snapshot();
    Ok(Json(json!({
        "category": label,
        "evolved": v.is_some(),
        "version": v,
        "pending": g.pending(&label),
        "n_thresh": g.config().n_thresh,
    }))
    .into_response())
}

async fn guidelines(State(rt): State<Arc<Runtime>>, Path(category): Path<String>) -> Result<Response, ApiError> {
    let label = Label::new(category);
    let g = rt.store.snapshot();
    if g.category(&label).is_none() && !g.labels().contains(&label) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_category", format!("no category {label}")));
    }
    Ok(Json(json!({
        "category": label,
        "versions": g.versions(&label),
        "timeline": g.guideline_timeline(&label),
    }))
    .into_response())
}

async fn healthz(State(rt): State<Arc<Runtime>>) -> Json<serde_json::Value> {
    let g = rt.store.snapshot();
    Json(json!({"status": "ok", "cases": g.len(), "categories": g.categories().len()}))
}

pub fn router(rt: Arc<Runtime>) -> Router {
    Router::new()
        .route("/v1/diagnose", post(diagnose))
        .route("/v1/memory/cases", get(list_cases).post(add_case))
        .route("/v1/memory/evolve/:category", post(evolve))
        .route("/v1/memory/guidelines/:category", get(guidelines))
        .route("/v1/healthz", get(healthz))
        .with_state(rt)
}

/// Serves until `shutdown` resolves, then checkpoints the memory store.
pub async fn serve(
    rt: Arc<Runtime>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), AppError> {
    axum::serve(listener, router(rt.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let rt2 = rt.clone();
    tokio::task::spawn_blocking(move || rt2.store.checkpoint())
        .await
        .map_err(|e| AppError::Backend(e.to_string()))??;
    Ok(())
}

async fn termination() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn tokio_runtime() -> Result<tokio::runtime::Runtime, AppError> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Runs the service on `config.service.bind` until SIGINT or SIGTERM.
pub fn serve_blocking(config: AppConfig) -> Result<(), AppError> {
    let bind = config.service.bind.clone();
    let rt = Arc::new(Runtime::open(config)?);
    let tokio_rt = tokio_runtime()?;
    tokio_rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| AppError::Bind(format!("{bind}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        serve(rt, listener, termination()).await
    })
}

/// A service running on a background thread, for tests and examples.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), AppError>>>,
}

impl ServiceHandle {
    pub fn spawn(rt: Arc<Runtime>, bind: &str) -> Result<Self, AppError> {
        let std_listener = std::net::TcpListener::bind(bind).map_err(|e| AppError::Bind(format!("{bind}: {e}")))?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let tokio_rt = tokio_runtime()?;
            tokio_rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(rt, listener, async {
                    let _ = rx.await;
                })
                .await
            })
        });
        Ok(ServiceHandle {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Stops the service and waits for the final checkpoint.
    pub fn shutdown(mut self) -> Result<(), AppError> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> Result<(), AppError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| AppError::Backend("service thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}
