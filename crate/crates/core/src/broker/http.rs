//! HTTP API: `GET /api/2/things`, `GET|PUT /api/2/things/{id}/features/{f}/properties/{p}`.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};

use super::{Broker, BrokerError};
use crate::Scalar;

impl IntoResponse for BrokerError {
    fn into_response(self) -> Response {
        let status = match &self {
            BrokerError::NotFound(_) => StatusCode::NOT_FOUND,
            BrokerError::Conflict(_) => StatusCode::CONFLICT,
            BrokerError::InvalidId(_) | BrokerError::BadRequest(_) => StatusCode::BAD_REQUEST,
            BrokerError::Blocked(_) => StatusCode::FORBIDDEN,
            BrokerError::Transport(_) | BrokerError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, self.to_string()).into_response()
    }
}

async fn list_things(State(b): State<Arc<Broker>>) -> Json<Vec<String>> {
    b.note_served();
    Json(b.thing_ids())
}

async fn get_property(
    State(b): State<Arc<Broker>>,
    Path((thing, feature, property)): Path<(String, String, String)>,
) -> Result<Json<serde_json::Value>, BrokerError> {
    b.note_served();
    Ok(Json(b.get_property(&thing, &feature, &property)?.to_json()))
}

/// Parses a request body as a JSON scalar.
pub(crate) fn parse_scalar(body: &[u8]) -> Result<Scalar, BrokerError> {
    let v: serde_json::Value = serde_json::from_slice(body).map_err(|e| BrokerError::BadRequest(e.to_string()))?;
    Scalar::try_from(v).map_err(|e| BrokerError::BadRequest(e.to_string()))
}

async fn put_property(
    State(b): State<Arc<Broker>>,
    Path((thing, feature, property)): Path<(String, String, String)>,
    body: Bytes,
) -> Result<Response, BrokerError> {
    b.note_served();
    let value = parse_scalar(&body)?;
    let rev = b.put_property(&thing, &feature, &property, value)?;
    Ok((StatusCode::NO_CONTENT, [(header::ETAG, format!("\"rev:{rev}\""))]).into_response())
}

/// Routes for `broker`; wrap with [`crate::web::gated`] to enforce the fabric.
pub fn router(broker: Arc<Broker>) -> Router {
    Router::new()
        .route("/api/2/things", get(list_things))
        .route("/api/2/things/{thing}/features/{feature}/properties/{property}", get(get_property).put(put_property))
        .with_state(broker)
}
