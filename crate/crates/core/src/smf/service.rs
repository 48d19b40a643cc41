//! SMF network front-end: `/smf/notify` receiver and the NWDAF client task.

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::task::JoinHandle;

use super::{Smf, UeSessionBinding};
use crate::config::{load_toml, ConfigError};
use crate::ees;
use crate::http::{self, Problem, ServerHandle};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmfConfig {
    #[serde(default = "default_listen")]
    pub listen_addr: String,
    pub nwdaf_uri: String,
    pub upf_uri: String,
    #[serde(default = "default_period")]
    pub report_period_s: u32,
    #[serde(default)]
    pub sessions: Vec<UeSessionBinding>,
}

fn default_listen() -> String {
    "127.0.0.1:0".into()
}

fn default_period() -> u32 {
    1
}

impl SmfConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        load_toml(path)
    }
}

pub fn router(smf: Arc<Smf>) -> Router {
    Router::new()
        .route("/smf/notify", post(notify))
        .route("/healthz", get(health))
        .with_state(smf)
}

async fn notify(State(smf): State<Arc<Smf>>, body: Bytes) -> Response {
    let n = match ees::decode_abnormal_behaviour(&body) {
        Ok(n) => n,
        Err(e) => return Problem::from(e).into_response(),
    };
    let actions = smf.handle_nwdaf_notification(&n).await;
    if !actions.is_empty() {
        smf.events().record("smf", "mitigation", json!({ "actions": actions }));
    }
    StatusCode::NO_CONTENT.into_response()
}

async fn health(State(smf): State<Arc<Smf>>) -> Response {
    Json(json!({
        "status": "ok",
        "subscriptionId": smf.subscription_id().await,
        "releaseCalls": smf.release_calls(),
        "sessions": smf.bindings(),
    }))
    .into_response()
}

pub struct SmfRuntime {
    pub http: ServerHandle,
    task: JoinHandle<()>,
}

impl SmfRuntime {
    pub fn base_uri(&self) -> String {
        self.http.base_uri()
    }

    pub async fn shutdown(self) {
        self.task.abort();
        self.http.shutdown().await;
    }
}

/// Serves the callback endpoint, then subscribes to the NWDAF in the background.
pub async fn start(smf: Arc<Smf>, cfg: &SmfConfig) -> std::io::Result<SmfRuntime> {
    let listener = http::bind(&cfg.listen_addr).await?;
    let handle = http::serve(listener, router(smf.clone())).await?;
    let notify_uri = format!("{}/smf/notify", handle.base_uri());
    let nwdaf = cfg.nwdaf_uri.clone();
    let period = cfg.report_period_s;
    let task = tokio::spawn(async move {
        smf.smf_subscribe(&nwdaf, period, &notify_uri).await;
    });
    Ok(SmfRuntime { http: handle, task })
}
