//! HTTP API: `GET /datapoint/getAll`, `GET /datapoint/{xid}/latest`, `POST /command`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use super::{CommandRequest, DatapointInfo, HistorianError, HistorianService};

impl IntoResponse for HistorianError {
    fn into_response(self) -> Response {
        let status = match &self {
            HistorianError::NotFound(_) | HistorianError::UnknownTarget(_) => StatusCode::NOT_FOUND,
            HistorianError::NoData(_) => StatusCode::CONFLICT,
            HistorianError::BadValue(_) => StatusCode::BAD_REQUEST,
            HistorianError::Blocked(_) => StatusCode::FORBIDDEN,
            _ => StatusCode::BAD_GATEWAY,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

async fn get_all(State(svc): State<Arc<HistorianService>>) -> Json<Vec<DatapointInfo>> {
    svc.store.note_served();
    Json(svc.store.get_all())
}

async fn latest(
    State(svc): State<Arc<HistorianService>>,
    Path(xid): Path<String>,
) -> Result<Json<serde_json::Value>, HistorianError> {
    svc.store.note_served();
    let s = svc.store.get_latest(&xid)?;
    Ok(Json(json!({ "timestamp": s.timestamp.as_secs_f64(), "value": s.value })))
}

async fn command(
    State(svc): State<Arc<HistorianService>>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, HistorianError> {
    svc.store.note_served();
    let cmd: CommandRequest = serde_json::from_slice(&body).map_err(|e| HistorianError::BadValue(e.to_string()))?;
    let revision = svc.commands.issue(&cmd).await?;
    Ok(Json(json!({ "target": cmd.target, "revision": revision })))
}

/// Routes for the historian; wrap with [`crate::web::gated`] to enforce the fabric.
pub fn router(svc: Arc<HistorianService>) -> Router {
    Router::new()
        .route("/datapoint/getAll", get(get_all))
        .route("/datapoint/{xid}/latest", get(latest))
        .route("/command", post(command))
        .with_state(svc)
}
