//! HTTP front-end of the model provisioning service.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{ForestModel, InferenceRequest, InferenceResponse, MlSubscription, ModelError, Registry, RegistryError};
use crate::config::{load_toml, ConfigError};
use crate::ees::{check_notify_uri, AnalyticsEventId, Token};
use crate::http::{self, Problem, ServerHandle};

pub const NOTIFY_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlprovConfig {
    pub registry_dir: PathBuf,
    #[serde(default = "default_listen")]
    pub listen_addr: String,
}

fn default_listen() -> String {
    "127.0.0.1:0".into()
}

impl MlprovConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        load_toml(path)
    }
}

#[derive(Clone)]
struct AppState {
    registry: Arc<Registry>,
    client: reqwest::Client,
}

fn registry_problem(e: RegistryError) -> Problem {
    match e {
        RegistryError::Model(ModelError::SchemaViolation(d)) => Problem::new(StatusCode::BAD_REQUEST, "SCHEMA_VIOLATION", d),
        RegistryError::Model(m) => Problem::new(StatusCode::BAD_REQUEST, "INVALID_MODEL", m.to_string()),
        RegistryError::BadName(_) => Problem::new(StatusCode::BAD_REQUEST, "SCHEMA_VIOLATION", e.to_string()),
        RegistryError::UnknownModel { .. } => Problem::new(StatusCode::NOT_FOUND, "UNKNOWN_MODEL", e.to_string()),
        RegistryError::Io(_) | RegistryError::Corrupt { .. } => {
            Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "REGISTRY_ERROR", e.to_string())
        }
    }
}

fn bad_json(e: serde_json::Error) -> Problem {
    Problem::new(StatusCode::BAD_REQUEST, "MALFORMED_JSON", e.to_string())
}

pub fn router(registry: Arc<Registry>) -> Router {
    let state = AppState { registry, client: http::client(NOTIFY_TIMEOUT) };
    Router::new()
        .route("/nnwdaf-mlmodelprovision/v1/subscriptions", post(subscribe))
        .route("/nnwdaf-mlmodelprovision/v1/subscriptions/{id}", delete(unsubscribe))
        .route("/admin/models", post(register))
        .route("/models", get(query))
        .route("/models/{name}/{action}", post(infer))
        .route("/healthz", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .with_state(state)
}

async fn subscribe(State(s): State<AppState>, body: Bytes) -> Response {
    let sub: MlSubscription = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return bad_json(e).into_response(),
    };
    if let Err(e) = check_notify_uri(&sub.notify_uri, "notifyUri") {
        return Problem::from(e).into_response();
    }
    (StatusCode::CREATED, Json(s.registry.subscribe(sub))).into_response()
}

async fn unsubscribe(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    if s.registry.unsubscribe(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        Problem::new(StatusCode::NOT_FOUND, "SUBSCRIPTION_NOT_FOUND", id).into_response()
    }
}

/// Registers a model and notifies matching subscribers before answering.
async fn register(State(s): State<AppState>, body: Bytes) -> Response {
    let model: ForestModel = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return bad_json(e).into_response(),
    };
    let registry = s.registry.clone();
    let (descriptor, notices) = match tokio::task::spawn_blocking(move || registry.register(model)).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => return registry_problem(e).into_response(),
        Err(e) => return Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "REGISTRY_ERROR", e.to_string()).into_response(),
    };
    let sends = notices.into_iter().map(|n| {
        let client = s.client.clone();
        async move {
            match client.post(&n.notify_uri).json(&n.body).send().await {
                Ok(r) if r.status().is_success() => {}
                Ok(r) => tracing::warn!("model notify {} answered {}", n.notify_uri, r.status()),
                Err(e) => tracing::warn!("model notify {} failed: {e}", n.notify_uri),
            }
        }
    });
    futures::future::join_all(sends).await;
    (StatusCode::CREATED, Json(descriptor)).into_response()
}

async fn query(State(s): State<AppState>, Query(mut params): Query<BTreeMap<String, String>>) -> Response {
    let Some(raw) = params.remove("event-id") else {
        return Problem::new(StatusCode::BAD_REQUEST, "MANDATORY_QUERY_PARAM_MISSING", "event-id").into_response();
    };
    let Some(event_id) = AnalyticsEventId::from_token(&raw) else {
        return Problem::new(StatusCode::BAD_REQUEST, "UNSUPPORTED_EVENT_ID", raw).into_response();
    };
    Json(s.registry.query(event_id, &params)).into_response()
}

/// `POST /models/{name}/{version}:infer`
async fn infer(State(s): State<AppState>, UrlPath((name, action)): UrlPath<(String, String)>, body: Bytes) -> Response {
    let Some(version) = action.strip_suffix(":infer").and_then(|v| v.parse::<u32>().ok()) else {
        return Problem::new(StatusCode::NOT_FOUND, "UNKNOWN_ACTION", action).into_response();
    };
    let model = match s.registry.get(&name, version) {
        Ok(m) => m,
        Err(e) => return registry_problem(e).into_response(),
    };
    let req: InferenceRequest = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return bad_json(e).into_response(),
    };
    match model.infer(&req.features) {
        Ok(predictions) => Json(InferenceResponse { model_name: name, model_version: version, predictions }).into_response(),
        Err(e) => Problem::new(StatusCode::BAD_REQUEST, "FEATURE_WIDTH_MISMATCH", e.to_string()).into_response(),
    }
}

pub async fn start(registry: Arc<Registry>, cfg: &MlprovConfig) -> std::io::Result<ServerHandle> {
    let listener = http::bind(&cfg.listen_addr).await?;
    let handle = http::serve(listener, router(registry.clone())).await?;
    registry.set_public_base(handle.base_uri());
    Ok(handle)
}
