//! JSON-over-HTTP front end for [`convrec_core::engine::Engine`].
//!
//! Engine calls are CPU bound, so every handler runs them on the blocking
//! pool. Sessions are serialized by the engine itself.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use convrec_core::engine::Engine;
use convrec_core::Error;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

pub const DEFAULT_MOVIE_LIMIT: usize = 10;
pub const MAX_MOVIE_LIMIT: usize = 100;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// False when the server runs on untrained parameters.
    pub model_loaded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
}

#[derive(Debug, Deserialize)]
pub struct MovieQuery {
    #[serde(default)]
    pub q: String,
    pub limit: Option<usize>,
}

pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownSession(_) => StatusCode::NOT_FOUND,
            Error::InvalidArgument(_) | Error::UnresolvedMention(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> convrec_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_loaded: s.model_loaded,
    })
}

async fn create_session(State(s): State<AppState>) -> Result<Json<SessionCreated>, ApiError> {
    let session_id = blocking(move || s.engine.create_session()).await?;
    Ok(Json(SessionCreated { session_id }))
}

async fn post_message(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<MessageRequest>,
) -> Result<Response, ApiError> {
    let turn = blocking(move || s.engine.post_utterance(&id, &body.text)).await?;
    Ok(Json(turn).into_response())
}

async fn diagnostics(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let d = blocking(move || s.engine.diagnostics(&id)).await?;
    Ok(Json(d).into_response())
}

async fn movies(State(s): State<AppState>, Query(q): Query<MovieQuery>) -> Response {
    let limit = q.limit.unwrap_or(DEFAULT_MOVIE_LIMIT).min(MAX_MOVIE_LIMIT);
    Json(s.engine.autocomplete(&q.q, limit)).into_response()
}

/// Builds the API router. An empty `origins` list allows any origin.
pub fn router(state: AppState, origins: &[String]) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = if origins.is_empty() {
        cors.allow_origin(Any)
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
        cors.allow_origin(list)
    };
    Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/diagnostics", get(diagnostics))
        .route("/api/movies", get(movies))
        .layer(cors)
        .with_state(state)
}

/// Periodically drops idle sessions until the runtime shuts down.
pub fn spawn_evictor(engine: Arc<Engine>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let n = engine.evict_idle();
            if n > 0 {
                log::info!("evicted {n} idle sessions");
            }
        }
    })
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr, origins: &[String]) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    let evictor = spawn_evictor(state.engine.clone(), Duration::from_secs(60));
    let result = axum::serve(listener, router(state, origins)).await;
    evictor.abort();
    result
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/service.md")]
mod book_service {}
