//! HTTP/JSON API for prediction and annotation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sacti_core::model::{PredictRequest, SactiModel};
use sacti_core::text::AnnotationRecord;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::store::{AnnotationStore, SettingsPatch, StoreError, Submission};

/// Environment variable holding the `host:port` to bind.
pub const BIND_ENV: &str = "SACTI_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

pub const OPENAPI: &str = include_str!("../openapi.json");

pub struct ServiceState {
    model: Option<Arc<SactiModel>>,
    config: Value,
    store: Mutex<AnnotationStore>,
}

impl ServiceState {
    /// `config` is echoed back by `GET /config`.
    pub fn new(model: Option<SactiModel>, config: Value, store: AnnotationStore) -> Self {
        ServiceState {
            model: model.map(Arc::new),
            config,
            store: Mutex::new(store),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    field: Option<String>,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, field: Option<&str>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            field: field.map(str::to_string),
            message: message.into(),
        }
    }

    fn bad_request(field: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, Some(field), message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {
            "status": self.status.as_u16(),
            "field": self.field,
            "message": self.message,
        }});
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::UnknownInstance(_) => ApiError::new(StatusCode::NOT_FOUND, Some("instance_id"), e.to_string()),
            StoreError::Invalid { field, .. } => ApiError::bad_request(field, e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string()),
        }
    }
}

/// Name of the offending field in a serde error, from its path or from the
/// `missing field`/`unknown field` message.
fn field_of(path: &str, message: &str) -> String {
    if !matches!(path, "" | "." | "?") {
        return path.to_string();
    }
    message
        .split('`')
        .nth(1)
        .filter(|_| message.starts_with("missing field") || message.starts_with("unknown field"))
        .unwrap_or("body")
        .to_string()
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let message = e.inner().to_string();
        ApiError::bad_request(&field_of(&e.path().to_string(), &message), message)
    })
}

type Shared = State<Arc<ServiceState>>;

async fn health(State(s): Shared) -> Json<Value> {
    Json(json!({"status": "ok", "checkpoint_loaded": s.model.is_some()}))
}

async fn config(State(s): Shared) -> Json<Value> {
    Json(s.config.clone())
}

async fn openapi() -> Response {
    ([("content-type", "application/json")], OPENAPI).into_response()
}

async fn predict(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    let model = s
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, None, "no checkpoint loaded"))?;
    let req: PredictRequest = parse_body(&body)?;
    let report = tokio::task::spawn_blocking(move || model.predict(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string()))?;
    match report {
        Ok(r) => Ok(Json(r).into_response()),
        Err(sacti_core::Error::Input { field, reason }) => Err(ApiError::bad_request(field, reason)),
        Err(e @ sacti_core::Error::TooLong { .. }) => Err(ApiError::bad_request("tokens", e.to_string())),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, None, e.to_string())),
    }
}

fn lock(s: &ServiceState) -> std::sync::MutexGuard<'_, AnnotationStore> {
    // A panic while holding the lock cannot leave a half-written record in
    // memory: records are pushed only after the journal write succeeds.
    s.store.lock().unwrap_or_else(|p| p.into_inner())
}

async fn next(State(s): Shared, Query(q): Query<HashMap<String, String>>) -> Result<Json<Value>, ApiError> {
    let annotator = q
        .get("annotator_id")
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("annotator_id", "query parameter is required"))?;
    let task = lock(&s).next_for(annotator);
    Ok(Json(json!({"task": task})))
}

async fn submit(State(s): Shared, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    if !lock(&s).contains(&id) {
        return Err(StoreError::UnknownInstance(id).into());
    }
    let sub: Submission = parse_body(&body)?;
    let (record, duplicate) = lock(&s).submit(&id, sub)?;
    Ok(Json(json!({"record": record, "duplicate": duplicate})))
}

async fn export(State(s): Shared) -> Json<Value> {
    Json(serde_json::to_value(lock(&s).export()).expect("export serializes"))
}

#[derive(Deserialize)]
struct ImportBody {
    records: Vec<AnnotationRecord>,
    /// Accepted so that an export can be posted back unchanged.
    #[serde(default, rename = "summary")]
    _summary: Option<Value>,
}

async fn import(State(s): Shared, body: Bytes) -> Result<Json<Value>, ApiError> {
    let body: ImportBody = parse_body(&body)?;
    let report = lock(&s).import(body.records)?;
    Ok(Json(serde_json::to_value(report).expect("report serializes")))
}

async fn get_labels(State(s): Shared) -> Json<Value> {
    Json(serde_json::to_value(lock(&s).settings()).expect("settings serialize"))
}

async fn set_labels(State(s): Shared, body: Bytes) -> Result<Json<Value>, ApiError> {
    let patch: SettingsPatch = parse_body(&body)?;
    let mut store = lock(&s);
    let settings = store.update_settings(patch)?;
    Ok(Json(serde_json::to_value(settings).expect("settings serialize")))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, None, "no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, None, "method not allowed on this route")
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/config", get(config))
        .route("/openapi.json", get(openapi))
        .route("/predict", post(predict))
        .route("/annotation/next", get(next))
        .route("/annotation/export", get(export))
        .route("/annotation/import", post(import))
        .route("/annotation/{id}", post(submit))
        .route("/admin/labels", get(get_labels).post(set_labels))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_names_from_serde_errors() {
        assert_eq!(field_of(".", "missing field `tokens` at line 1 column 2"), "tokens");
        assert_eq!(field_of(".", "unknown field `extra`, expected one of"), "extra");
        assert_eq!(field_of("compound_index", "invalid type: string"), "compound_index");
        assert_eq!(field_of(".", "EOF while parsing"), "body");
        assert_eq!(field_of("?", "key must be a string"), "body");
    }

    #[test]
    fn openapi_document_parses() {
        let doc: Value = serde_json::from_str(OPENAPI).unwrap();
        assert!(doc["paths"]["/predict"]["post"].is_object());
    }
}
