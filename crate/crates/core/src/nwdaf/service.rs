//! NWDAF network front-end: SBI callback receiver and UPF client, NBI
//! subscription API and dispatcher, and the model-provisioning client.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::task::JoinHandle;

use super::{collection_request, NbiDelivery, Nwdaf, NwdafError, SbiState, DISPATCH_TICK};
use crate::config::{load_toml, ConfigError};
use crate::ees::{self, AnalyticsEventId, Token};
use crate::engine::{EngineError, ModelBinding};
use crate::http::{self, json_bytes, Backoff, Problem, ServerHandle};
use crate::mlprov::{MlSubscription, MlSubscriptionResponse, ModelNotification};

pub const SBI_BACKOFF_CAP: Duration = Duration::from_secs(30);
pub const NBI_DELIVERY_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NwdafConfig {
    #[serde(default = "default_listen")]
    pub listen_addr: String,
    #[serde(default)]
    pub upf_uri: Option<String>,
    #[serde(default = "default_period")]
    pub collection_period_s: u32,
    #[serde(default)]
    pub store_path: Option<PathBuf>,
    #[serde(default)]
    pub ml_provision_uri: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_listen() -> String {
    "127.0.0.1:0".into()
}

fn default_period() -> u32 {
    1
}

fn default_threshold() -> f64 {
    crate::engine::DEFAULT_THRESHOLD
}

impl Default for NwdafConfig {
    fn default() -> Self {
        NwdafConfig {
            listen_addr: default_listen(),
            upf_uri: None,
            collection_period_s: default_period(),
            store_path: None,
            ml_provision_uri: None,
            threshold: default_threshold(),
        }
    }
}

impl NwdafConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        load_toml(path)
    }
}

pub fn router(nwdaf: Arc<Nwdaf>) -> Router {
    Router::new()
        .route("/sbi/notify", post(sbi_notify))
        .route("/nnwdaf-eventssubscription/v1/subscriptions", post(nbi_subscribe))
        .route("/nnwdaf-eventssubscription/v1/subscriptions/{id}", delete(nbi_unsubscribe))
        .route("/nnwdaf-analyticsinfo/v1/analytics", get(one_shot))
        .route("/ml/notify", post(ml_notify))
        .route("/healthz", get(health))
        .with_state(nwdaf)
}

async fn sbi_notify(State(nwdaf): State<Arc<Nwdaf>>, body: Bytes) -> Response {
    let n = match ees::decode_notification(&body) {
        Ok(n) => n,
        Err(e) => return Problem::from(e).into_response(),
    };
    match tokio::task::spawn_blocking(move || nwdaf.handle_upf_notification(n)).await {
        Ok(Ok(_)) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e)) => Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "STORE_FAILURE", e.to_string()).into_response(),
        Err(e) => Problem::new(StatusCode::INTERNAL_SERVER_ERROR, "STORE_FAILURE", e.to_string()).into_response(),
    }
}

async fn nbi_subscribe(State(nwdaf): State<Arc<Nwdaf>>, body: Bytes) -> Response {
    let sub = match ees::decode_analytics_subscription(&body) {
        Ok(s) => s,
        Err(e) if e.field().is_some_and(|f| f.ends_with("eventId")) => {
            return Problem::new(StatusCode::BAD_REQUEST, "UNSUPPORTED_EVENT_ID", e.to_string()).into_response();
        }
        Err(e) => return Problem::from(e).into_response(),
    };
    match nwdaf.handle_analytics_subscribe(sub.clone(), Utc::now()) {
        Ok(id) => {
            let created = ees::AnalyticsSubscription { subscription_id: id.clone(), ..sub };
            let body = ees::encode_analytics_subscription(&created).expect("accepted subscription encodes");
            let mut r = json_bytes(StatusCode::CREATED, body);
            let location = format!("/nnwdaf-eventssubscription/v1/subscriptions/{id}");
            r.headers_mut().insert(header::LOCATION, location.parse().expect("header value"));
            r
        }
        Err(e) => Problem::new(StatusCode::BAD_REQUEST, "INVALID_SUBSCRIPTION", e.to_string()).into_response(),
    }
}

async fn nbi_unsubscribe(State(nwdaf): State<Arc<Nwdaf>>, UrlPath(id): UrlPath<String>) -> Response {
    match nwdaf.handle_analytics_unsubscribe(&id) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e @ NwdafError::UnknownSubscription(_)) => {
            Problem::new(StatusCode::NOT_FOUND, "SUBSCRIPTION_NOT_FOUND", e.to_string()).into_response()
        }
        Err(e) => Problem::new(StatusCode::BAD_REQUEST, "INVALID_SUBSCRIPTION", e.to_string()).into_response(),
    }
}

fn engine_problem(e: EngineError) -> Problem {
    match e {
        EngineError::NoModelAvailable => Problem::new(StatusCode::SERVICE_UNAVAILABLE, "NO_MODEL_AVAILABLE", e.to_string()),
        _ => Problem::new(StatusCode::SERVICE_UNAVAILABLE, "ANALYTICS_UNAVAILABLE", e.to_string()),
    }
}

async fn one_shot(State(nwdaf): State<Arc<Nwdaf>>, Query(q): Query<BTreeMap<String, String>>) -> Response {
    match q.get("event-id").map(|t| AnalyticsEventId::from_token(t)) {
        Some(Some(AnalyticsEventId::AbnormalBehaviour)) => {}
        Some(None) => {
            let raw = q.get("event-id").cloned().unwrap_or_default();
            return Problem::new(StatusCode::BAD_REQUEST, "UNSUPPORTED_EVENT_ID", raw).into_response();
        }
        None => return Problem::new(StatusCode::BAD_REQUEST, "MANDATORY_QUERY_PARAM_MISSING", "event-id").into_response(),
    }
    match nwdaf.analytics_now(Utc::now()).await {
        Ok(n) => json_bytes(StatusCode::OK, ees::encode_abnormal_behaviour(&n).expect("notification encodes")),
        Err(e) => engine_problem(e).into_response(),
    }
}

async fn ml_notify(State(nwdaf): State<Arc<Nwdaf>>, body: Bytes) -> Response {
    let n: ModelNotification = match serde_json::from_slice(&body) {
        Ok(n) => n,
        Err(e) => return Problem::new(StatusCode::BAD_REQUEST, "MALFORMED_JSON", e.to_string()).into_response(),
    };
    match bind_model(&nwdaf, &n) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => Problem::new(StatusCode::BAD_REQUEST, "SCHEMA_MISMATCH", e.to_string()).into_response(),
    }
}

fn bind_model(nwdaf: &Nwdaf, n: &ModelNotification) -> Result<(), EngineError> {
    let binding = ModelBinding::try_from(n)?;
    nwdaf.events().record(
        "nwdaf",
        "model_bound",
        json!({ "name": binding.name, "version": binding.version, "uri": binding.inference_uri }),
    );
    nwdaf.engine().bind_model(binding);
    Ok(())
}

async fn health(State(nwdaf): State<Arc<Nwdaf>>) -> Response {
    let model = nwdaf.engine().model().map(|m| json!({ "name": m.name, "version": m.version }));
    Json(json!({
        "status": "ok",
        "sbi": nwdaf.sbi_state(),
        "reports": nwdaf.report_count(),
        "engineErrors": nwdaf.engine_errors(),
        "model": model,
    }))
    .into_response()
}

/// Places the southbound EES subscription, retrying with backoff until the
/// UPF accepts it.
pub fn spawn_sbi(nwdaf: Arc<Nwdaf>, upf_uri: String, period_s: u32, notify_uri: String) -> JoinHandle<()> {
    tokio::spawn(async move {
        let client = http::client(Duration::from_secs(2));
        let body = ees::encode_subscription_request(&collection_request(period_s, &notify_uri))
            .expect("collection request is valid");
        let mut backoff = Backoff::new(SBI_BACKOFF_CAP);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let url = format!("{upf_uri}/nupf-ee/v1/ee-subscriptions");
            let err = match client.post(&url).header(header::CONTENT_TYPE, http::JSON).body(body.clone()).send().await {
                Ok(r) if r.status() == StatusCode::CREATED => match r.bytes().await.map(|b| ees::decode_subscription_response(&b)) {
                    Ok(Ok(resp)) => {
                        nwdaf.events().record(
                            "nwdaf",
                            "sbi_subscribed",
                            json!({ "subscriptionId": resp.subscription_id, "periodSeconds": period_s }),
                        );
                        nwdaf.set_sbi_state(SbiState::Subscribed { subscription_id: resp.subscription_id, upf_uri });
                        return;
                    }
                    Ok(Err(e)) => e.to_string(),
                    Err(e) => e.to_string(),
                },
                Ok(r) => format!("UPF answered {}", r.status()),
                Err(e) => e.to_string(),
            };
            tracing::warn!("UPF subscription attempt {attempts} failed: {err}");
            nwdaf.set_sbi_state(SbiState::Retrying { attempts, last_error: err });
            tokio::time::sleep(backoff.next_delay()).await;
        }
    })
}

/// Subscribes to the model provisioning service and binds the current model.
pub fn spawn_ml_subscription(nwdaf: Arc<Nwdaf>, ml_uri: String, notify_uri: String) -> JoinHandle<()> {
    tokio::spawn(async move {
        let client = http::client(Duration::from_secs(2));
        let sub = MlSubscription {
            subscription_id: String::new(),
            event_id: AnalyticsEventId::AbnormalBehaviour,
            filters: None,
            notify_uri,
        };
        let mut backoff = Backoff::new(SBI_BACKOFF_CAP);
        loop {
            let url = format!("{ml_uri}/nnwdaf-mlmodelprovision/v1/subscriptions");
            match client.post(&url).json(&sub).send().await {
                Ok(r) if r.status().is_success() => match r.json::<MlSubscriptionResponse>().await {
                    Ok(resp) => {
                        if let Some(current) = resp.current {
                            if let Err(e) = bind_model(&nwdaf, &current) {
                                tracing::error!("provisioned model rejected: {e}");
                            }
                        }
                        return;
                    }
                    Err(e) => tracing::warn!("bad model subscription response: {e}"),
                },
                Ok(r) => tracing::warn!("model provisioning answered {}", r.status()),
                Err(e) => tracing::warn!("model provisioning unreachable: {e}"),
            }
            tokio::time::sleep(backoff.next_delay()).await;
        }
    })
}

async fn deliver(client: &reqwest::Client, d: &NbiDelivery) -> bool {
    let body = match ees::encode_abnormal_behaviour(&d.notification) {
        Ok(b) => b,
        Err(e) => {
            tracing::error!("refusing to send invalid notification: {e}");
            return true;
        }
    };
    match client.post(&d.notify_uri).header(header::CONTENT_TYPE, http::JSON).body(body).send().await {
        Ok(r) if r.status().is_success() => true,
        Ok(r) => {
            tracing::warn!("NBI notify {} answered {}", d.notify_uri, r.status());
            false
        }
        Err(e) => {
            tracing::warn!("NBI notify {} failed: {e}", d.notify_uri);
            false
        }
    }
}

/// Northbound timer: runs due analyses and delivers their notifications.
pub fn spawn_dispatcher(nwdaf: Arc<Nwdaf>) -> JoinHandle<()> {
    tokio::spawn(async move {
        let client = http::client(NBI_DELIVERY_TIMEOUT);
        let mut ticker = tokio::time::interval(DISPATCH_TICK);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            for d in nwdaf.nbi_dispatch_tick(Utc::now()).await {
                let client = client.clone();
                let nwdaf = nwdaf.clone();
                tokio::spawn(async move {
                    if deliver(&client, &d).await {
                        nwdaf.events().record(
                            "nwdaf",
                            "nbi_notified",
                            json!({ "subscriptionId": d.notification.subscription_id, "exceptions": d.notification.exceptions.len() }),
                        );
                    } else {
                        nwdaf.delivery_failed(d);
                    }
                });
            }
        }
    })
}

pub struct NwdafRuntime {
    pub http: ServerHandle,
    tasks: Vec<JoinHandle<()>>,
}

impl NwdafRuntime {
    pub fn base_uri(&self) -> String {
        self.http.base_uri()
    }

    pub async fn shutdown(self) {
        for t in &self.tasks {
            t.abort();
        }
        self.http.shutdown().await;
    }
}

pub async fn start(nwdaf: Arc<Nwdaf>, cfg: &NwdafConfig) -> std::io::Result<NwdafRuntime> {
    let listener = http::bind(&cfg.listen_addr).await?;
    let http = http::serve(listener, router(nwdaf.clone())).await?;
    let base = http.base_uri();
    let mut tasks = vec![spawn_dispatcher(nwdaf.clone())];
    if let Some(upf) = &cfg.upf_uri {
        nwdaf.set_source_upf(upf.clone());
        tasks.push(spawn_sbi(nwdaf.clone(), upf.clone(), cfg.collection_period_s, format!("{base}/sbi/notify")));
    }
    if let Some(ml) = &cfg.ml_provision_uri {
        tasks.push(spawn_ml_subscription(nwdaf.clone(), ml.clone(), format!("{base}/ml/notify")));
    }
    Ok(NwdafRuntime { http, tasks })
}
