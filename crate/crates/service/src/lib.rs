//! HTTP API over the retrieval pipeline.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/api/v1/search` | `SearchRequest` |
//! | POST | `/api/v1/temporal` | `TemporalRequest` |
//! | POST | `/api/v1/qa` | `QaSubmission` |
//! | GET | `/api/v1/frames/{video_id}?from=&to=` | |
//! | GET | `/api/v1/corpus` | |
//! | GET | `/healthz` | |
//!
//! Errors are `{"error": "...", "model_id": "..."}` with status 400 for bad
//! input, 404 for unknown models or videos, 502 when an encoder fails.

pub mod qa;

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use momentscope_core::config::EngineConfig;
use momentscope_core::pipeline::{
    Engine, ErrorKind, LoadError, PipelineError, SearchRequest, TemporalRequest,
};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;
use tower_http::services::ServeDir;

pub use qa::{QaError, QaLog, QaReceipt, QaRecord, QaSubmission};

const PLACEHOLDER_SVG: &str = r##"<svg xmlns="http://www.w3.org/2000/svg" width="160" height="90" viewBox="0 0 160 90"><rect width="160" height="90" fill="#ddd"/><text x="80" y="50" font-family="sans-serif" font-size="12" text-anchor="middle" fill="#777">no thumbnail</text></svg>"##;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Qa(#[from] QaError),
    #[error("listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub qa: Arc<QaLog>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    model_id: Option<String>,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            model_id: None,
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
            model_id: None,
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match e.kind() {
            ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Upstream => StatusCode::BAD_GATEWAY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let model_id = match &e {
            PipelineError::UnknownModel(m) => Some(m.clone()),
            PipelineError::Encoder { model_id, .. } => Some(model_id.clone()),
            _ => None,
        };
        Self {
            status,
            message: e.to_string(),
            model_id,
        }
    }
}

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Io { .. } => Self::internal(e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(m) = self.model_id {
            body["model_id"] = m.into();
        }
        (self.status, Json(body)).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn search(
    State(state): State<AppState>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let resp = blocking(move || Ok(state.engine.handle_search(&req)?)).await?;
    Ok(Json(resp).into_response())
}

async fn temporal(
    State(state): State<AppState>,
    body: Result<Json<TemporalRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let resp = blocking(move || Ok(state.engine.handle_temporal(&req)?)).await?;
    Ok(Json(resp).into_response())
}

async fn qa_submit(
    State(state): State<AppState>,
    body: Result<Json<QaSubmission>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(sub) = body?;
    let record = blocking(move || Ok(state.qa.submit(&sub, state.engine.manifest())?)).await?;
    tracing::info!(submission_id = %record.submission_id, "qa submission");
    let receipt = QaReceipt {
        submission_id: record.submission_id,
        content_hash: record.content_hash,
        submitted_at: record.submitted_at,
    };
    Ok((StatusCode::CREATED, Json(receipt)).into_response())
}

#[derive(Debug, Deserialize)]
struct FramesQuery {
    from: Option<u32>,
    to: Option<u32>,
}

async fn frames(
    State(state): State<AppState>,
    Path(video_id): Path<String>,
    query: Result<Query<FramesQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let frames = state.engine.handle_frames_window(&video_id, q.from, q.to)?;
    Ok(Json(frames).into_response())
}

async fn corpus(State(state): State<AppState>) -> Response {
    Json(state.engine.corpus_summary()).into_response()
}

async fn healthz(State(state): State<AppState>) -> Response {
    Json(json!({
        "status": "ok",
        "frames": state.engine.manifest().len(),
        "models": state.engine.models().ids().collect::<Vec<_>>(),
    }))
    .into_response()
}

async fn placeholder() -> Response {
    ([(header::CONTENT_TYPE, "image/svg+xml")], PLACEHOLDER_SVG).into_response()
}

/// Builds the router. Static thumbnails and the UI bundle are mounted only
/// when their directories are given.
pub fn router(state: AppState, thumbnail_dir: Option<PathBuf>, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/api/v1/search", post(search))
        .route("/api/v1/temporal", post(temporal))
        .route("/api/v1/qa", post(qa_submit))
        .route("/api/v1/frames/{video_id}", get(frames))
        .route("/api/v1/corpus", get(corpus))
        .route("/healthz", get(healthz))
        .route("/static/placeholder.svg", get(placeholder));
    if let Some(dir) = thumbnail_dir {
        app = app.nest_service("/thumbnails", ServeDir::new(dir));
    }
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.with_state(state)
}

pub fn app_from_config(config: &EngineConfig) -> Result<Router, ServeError> {
    let engine = Engine::load(config)?;
    tracing::info!(
        frames = engine.manifest().len(),
        models = engine.models().len(),
        "corpus loaded"
    );
    let qa = QaLog::open(&config.qa_log_path())?;
    let state = AppState {
        engine: Arc::new(engine),
        qa: Arc::new(qa),
    };
    Ok(router(state, config.thumbnail_dir.clone(), config.ui_dir.clone()))
}

/// Serves `app` on an already bound listener until the process exits.
pub async fn serve_on(listener: tokio::net::TcpListener, app: Router) -> Result<(), ServeError> {
    axum::serve(listener, app).await?;
    Ok(())
}

pub async fn serve(config: &EngineConfig) -> Result<(), ServeError> {
    let app = app_from_config(config)?;
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|source| ServeError::Bind {
            addr: config.listen.clone(),
            source,
        })?;
    tracing::info!(addr = %config.listen, "listening");
    serve_on(listener, app).await
}
