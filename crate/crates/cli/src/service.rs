//! HTTP prediction service.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use itk_core::model::{TrainedModel, FORMAT_VERSION};
use itk_core::normalize::IssueText;
use serde_json::json;
use tokio::net::TcpListener;

use crate::commands::predict;
use crate::error::{CliError, Result};

pub const MAX_BODY_BYTES: usize = 1 << 20;

pub fn router(model: Arc<TrainedModel>) -> Router {
    Router::new()
        .route("/predict", post(predict_handler))
        .route("/health", get(health_handler))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(model)
}

async fn health_handler(State(model): State<Arc<TrainedModel>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "model_kind": model.kind(),
        "format_version": FORMAT_VERSION,
    }))
}

fn error(status: StatusCode, message: String) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

async fn predict_handler(State(model): State<Arc<TrainedModel>>, body: Bytes) -> Response {
    let issue: IssueText = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    match predict(&model, &issue) {
        Ok(resp) => Json(resp).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Binds `addr` (port 0 picks a free port), calls `on_ready` with the bound
/// address, and serves until the process ends.
pub async fn serve(model: TrainedModel, addr: SocketAddr, on_ready: impl FnOnce(SocketAddr)) -> Result<()> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::io(addr.to_string(), e))?;
    let local = listener.local_addr().map_err(|e| CliError::io(addr.to_string(), e))?;
    on_ready(local);
    axum::serve(listener, router(Arc::new(model)))
        .await
        .map_err(|e| CliError::io(local.to_string(), e))
}
