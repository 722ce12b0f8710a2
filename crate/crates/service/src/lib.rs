//! HTTP recognition service: a frozen checkpoint behind a small JSON API.
//!
//! Endpoints:
//! - `POST /api/recognize` with `{"points": [[p, q, s], ...], "topk": 5}`
//! - `GET /api/labels`
//! - `GET /api/health`
//!
//! Everything else falls through to an optional static directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use airwrite_core::pipeline::{Candidate, Recognizer};
use airwrite_core::training::Checkpoint;
use airwrite_core::trajectory::{Trajectory, TrajectoryError, TrajectoryPoint};
use airwrite_core::Error;
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub const DEFAULT_PORT: u16 = 8790;
pub const MAX_POINTS: usize = 10_000;
pub const DEFAULT_TOPK: usize = 5;
pub const MAX_TOPK: usize = 50;

/// A recognizer plus the version string reported by `/api/health`.
#[derive(Debug)]
pub struct LoadedModel {
    recognizer: Recognizer,
    model_version: String,
}

impl LoadedModel {
    pub fn new(recognizer: Recognizer, model_version: impl Into<String>) -> Self {
        Self {
            recognizer,
            model_version: model_version.into(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> airwrite_core::Result<Self> {
        let version = ckpt.metadata.model_version.clone();
        let recognizer = Recognizer::new(ckpt.model, ckpt.vocab, ckpt.metadata.spacing)?;
        Ok(Self::new(recognizer, version))
    }

    pub fn load(path: &Path) -> airwrite_core::Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn recognizer(&self) -> &Recognizer {
        &self.recognizer
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }
}

/// Shared handle to the model. Starts empty; [`ServiceState::install`] fills
/// it exactly once.
#[derive(Debug, Clone, Default)]
pub struct ServiceState {
    model: Arc<OnceLock<Arc<LoadedModel>>>,
}

impl ServiceState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_model(model: LoadedModel) -> Self {
        let state = Self::new();
        state.install(model);
        state
    }

    /// Returns false if a model was already installed.
    pub fn install(&self, model: LoadedModel) -> bool {
        self.model.set(Arc::new(model)).is_ok()
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.get().cloned()
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct RecognizeRequest {
    pub points: Vec<(f64, f64, u32)>,
    #[serde(default)]
    pub topk: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizeResponse {
    pub candidates: Vec<Candidate>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_version: Option<String>,
}

/// Error body: `{"code": "...", "message": "..."}`, plus `id` on 500s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                id: None,
            },
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    /// Logs the cause under a fresh id and returns only the id.
    fn internal(cause: &dyn std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        log::error!("request {id} failed: {cause}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                code: "internal".into(),
                message: "recognition failed".into(),
                id: Some(id),
            },
        }
    }

    fn not_ready() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "not_ready",
            "model is still loading",
        )
    }

    fn from_trajectory(e: &TrajectoryError) -> Self {
        match e {
            TrajectoryError::Empty | TrajectoryError::TooShort(_) => {
                Self::bad_request("too_short", e.to_string())
            }
            TrajectoryError::NonMonotoneStrokes { .. } => {
                Self::bad_request("non_monotone", e.to_string())
            }
            _ => Self::bad_request("malformed", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Checks the request and turns it into a trajectory plus the effective top-k.
pub fn validate_request(req: RecognizeRequest) -> Result<(Trajectory, usize), ApiError> {
    let n = req.points.len();
    if n > MAX_POINTS {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!("{n} points exceeds the limit of {MAX_POINTS}"),
        ));
    }
    let topk = req.topk.unwrap_or(DEFAULT_TOPK);
    if !(1..=MAX_TOPK).contains(&topk) {
        return Err(ApiError::bad_request(
            "malformed",
            format!("topk must be between 1 and {MAX_TOPK}, got {topk}"),
        ));
    }
    if n < 3 {
        return Err(ApiError::from_trajectory(&TrajectoryError::TooShort(n)));
    }
    let traj = Trajectory::new(
        req.points
            .into_iter()
            .map(|(p, q, s)| TrajectoryPoint::new(p, q, s))
            .collect(),
    );
    traj.validate().map_err(|e| ApiError::from_trajectory(&e))?;
    Ok((traj, topk))
}

async fn recognize(
    State(state): State<ServiceState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<RecognizeResponse>, ApiError> {
    let start = Instant::now();
    let model = state.model().ok_or_else(ApiError::not_ready)?;
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "too_large", e.body_text())
        } else {
            ApiError::bad_request("malformed", e.body_text())
        }
    })?;
    let req: RecognizeRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("malformed", e.to_string()))?;
    let (traj, topk) = validate_request(req)?;
    let points = traj.len();

    let candidates = tokio::task::spawn_blocking(move || model.recognizer().recognize(&traj, topk))
        .await
        .map_err(|e| ApiError::internal(&e))?
        .map_err(|e| match e {
            Error::Trajectory(t) => ApiError::from_trajectory(&t),
            other => ApiError::internal(&other),
        })?;

    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    log::debug!("recognized {points} points in {latency_ms:.2} ms");
    Ok(Json(RecognizeResponse {
        candidates,
        latency_ms,
    }))
}

async fn labels(State(state): State<ServiceState>) -> Result<Json<LabelsResponse>, ApiError> {
    let model = state.model().ok_or_else(ApiError::not_ready)?;
    Ok(Json(LabelsResponse {
        labels: model.recognizer().vocab().symbols().to_vec(),
    }))
}

async fn health(State(state): State<ServiceState>) -> Response {
    match state.model() {
        Some(m) => Json(HealthResponse {
            status: "ok".into(),
            model_version: Some(m.model_version().to_string()),
        })
        .into_response(),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(HealthResponse {
                status: "loading".into(),
                model_version: None,
            }),
        )
            .into_response(),
    }
}

/// The API routes with permissive CORS. Requests outside `/api/` are served
/// from `static_dir` when given.
pub fn app(state: ServiceState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/recognize", post(recognize))
        .route("/api/labels", get(labels))
        .route("/api/health", get(health))
        .with_state(state);
    let router = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    router.layer(CorsLayer::permissive())
}

/// Serves until the process is stopped.
pub async fn serve(
    addr: SocketAddr,
    state: ServiceState,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app(state, static_dir)).await
}
