//! JSON-over-HTTP sessions in which a person (or a program) answers pairwise
//! preference queries one at a time.
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | create; returns the id, schedule and first pair |
//! | `GET /sessions/{id}` | snapshot |
//! | `GET /sessions/{id}/pair` | pending pair, `null` once finished |
//! | `POST /sessions/{id}/feedback` | `{winner: "first" \| "second", pair_token}` |
//! | `GET /sessions/{id}/report` | survivors and predicted preferences |
//!
//! Errors are `{code, message, field?}` with status 400, 404 or 409.

pub mod api;
pub mod error;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use tokio::net::TcpListener;

use crate::api::{
    CreateResponse, CreateSession, Feedback, FeedbackResponse, PendingPair, Report, Snapshot,
};
use crate::error::{ApiError, ApiResult};
pub use crate::session::Limits;
pub use crate::store::Store;

fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        // A missing key reports the path of its parent object.
        let named = message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next());
        let field = match (path.as_str(), named) {
            (".", Some(name)) => Some(name.to_string()),
            (".", None) => None,
            (_, Some(name)) => Some(format!("{path}.{name}")),
            _ => Some(path),
        };
        ApiError::Invalid { message, field }
    })
}

/// Runs store work off the async executor; fits can take a while.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| std::panic::resume_unwind(e.into_panic()))
}

async fn create(
    State(store): State<Arc<Store>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let req: CreateSession = parse(&body)?;
    let out = blocking(move || store.create(req)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn snapshot(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Snapshot>> {
    blocking(move || store.with_session(&id, |s| s.snapshot()))
        .await
        .map(Json)
}

async fn pair(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Option<PendingPair>>> {
    blocking(move || store.with_session(&id, |s| Ok(s.pending())))
        .await
        .map(Json)
}

async fn feedback(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<FeedbackResponse>> {
    // Unknown sessions are 404 even when the body is malformed.
    let fb: ApiResult<Feedback> = parse(&body);
    blocking(move || {
        store.with_session(&id, |_| Ok(()))?;
        store.feedback(&id, fb?)
    })
    .await
    .map(Json)
}

async fn report(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Report>> {
    blocking(move || store.with_session(&id, |s| s.report()))
        .await
        .map(Json)
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(snapshot))
        .route("/sessions/{id}/pair", get(pair))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/report", get(report))
        .with_state(store)
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub limits: Limits,
    /// Append-only event log; sessions are recovered from it on start.
    pub journal: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            limits: Limits::default(),
            journal: None,
        }
    }
}

pub fn open_store(config: &ServiceConfig) -> std::io::Result<Arc<Store>> {
    Ok(Arc::new(match &config.journal {
        Some(path) => Store::open(config.limits, path)?,
        None => Store::in_memory(config.limits),
    }))
}

/// Serves on an already bound listener until ctrl-c.
pub async fn serve_on(listener: TcpListener, store: Arc<Store>) -> std::io::Result<()> {
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let store = open_store(&config)?;
    let listener = TcpListener::bind(config.addr).await?;
    serve_on(listener, store).await
}
