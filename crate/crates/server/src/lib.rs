//! HTTP front end for interactive sessions.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mech_search_core::session::{CreateSessionRequest, SessionError, SessionManager, StepRequest, StepResponse, WIRE_VERSION};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub version: u32,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapList {
    pub version: u32,
    pub heaps: Vec<String>,
}

pub struct ApiError(StatusCode, &'static str, String);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, kind) = match &e {
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::SessionFinished(_) => (StatusCode::CONFLICT, "session_finished"),
            SessionError::ConcurrentStep => (StatusCode::CONFLICT, "concurrent_step"),
            SessionError::UnknownObject(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_object"),
            SessionError::BadSnapshot(_) => (StatusCode::BAD_REQUEST, "bad_snapshot"),
            SessionError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            SessionError::Engine(_) => (StatusCode::INTERNAL_SERVER_ERROR, "engine"),
        };
        ApiError(status, kind, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { version: WIRE_VERSION, error: self.1.to_string(), message: self.2 };
        (self.0, Json(body)).into_response()
    }
}

type Shared = Arc<SessionManager>;

/// Runs engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, SessionError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "engine", e.to_string()))?
        .map_err(ApiError::from)
}

async fn create(State(m): State<Shared>, body: Result<Json<CreateSessionRequest>, JsonRejection>) -> Result<(StatusCode, Json<StepResponse>), ApiError> {
    let Json(req) = body?;
    let resp = blocking(move || m.create_session(&req)).await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn observe(State(m): State<Shared>, Path(id): Path<String>) -> Result<Json<StepResponse>, ApiError> {
    Ok(Json(blocking(move || m.get_observation(&id)).await?))
}

async fn step(
    State(m): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> Result<Json<StepResponse>, ApiError> {
    let Json(req) = body?;
    Ok(Json(blocking(move || m.submit_step(&id, &req)).await?))
}

async fn heaps(State(m): State<Shared>) -> Json<HeapList> {
    Json(HeapList { version: WIRE_VERSION, heaps: m.heap_names() })
}

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(observe))
        .route("/sessions/{id}/step", post(step))
        .route("/heaps", get(heaps))
        .layer(CorsLayer::permissive())
        .with_state(manager)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, manager: Shared) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, manager).await
}

/// Serves on an already bound listener.
pub async fn serve_on(listener: tokio::net::TcpListener, manager: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(manager)).await
}
