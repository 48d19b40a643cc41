//! Network front-end of the simulated UPF: event exposure and N4-like HTTP
//! endpoints, the notifier timer and the packet ingestion socket.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::Utc;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use super::{Delivery, PacketDescriptor, PacketKind, PduSession, ForwardDecision, Upf, UpfError};
use crate::config::{load_toml, ConfigError};
use crate::ees;
use crate::http::{self, json_bytes, Problem, ServerHandle};

pub const NOTIFIER_CADENCE: Duration = Duration::from_millis(20);
pub const DELIVERY_TIMEOUT: Duration = Duration::from_secs(1);
/// Upper bound on one ingestion frame.
pub const MAX_FRAME: usize = 64 * 1024;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpfConfig {
    #[serde(default = "localhost")]
    pub listen_addr: String,
    #[serde(default)]
    pub ee_port: u16,
    #[serde(default)]
    pub ingest_port: u16,
    #[serde(default)]
    pub sessions: Vec<PduSession>,
}

fn localhost() -> String {
    "127.0.0.1".to_string()
}

impl Default for UpfConfig {
    fn default() -> Self {
        UpfConfig { listen_addr: localhost(), ee_port: 0, ingest_port: 0, sessions: Vec::new() }
    }
}

impl UpfConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        load_toml(path)
    }
}

fn upf_problem(e: UpfError) -> Problem {
    match e {
        UpfError::AllEventsUnsupported => Problem::new(StatusCode::FORBIDDEN, "UNSUPPORTED_EVENTS", e.to_string()),
        UpfError::UnknownSubscription(_) => Problem::new(StatusCode::NOT_FOUND, "SUBSCRIPTION_NOT_FOUND", e.to_string()),
        UpfError::UnknownSession(_) => Problem::new(StatusCode::NOT_FOUND, "CONTEXT_NOT_FOUND", e.to_string()),
        UpfError::SessionExists(_) => Problem::new(StatusCode::CONFLICT, "SESSION_EXISTS", e.to_string()),
        UpfError::InvalidPacket(_) => Problem::new(StatusCode::BAD_REQUEST, "INVALID_PACKET", e.to_string()),
        UpfError::Codec(c) => c.into(),
    }
}

pub fn router(upf: Arc<Upf>) -> Router {
    Router::new()
        .route("/nupf-ee/v1/ee-subscriptions", post(subscribe))
        .route("/nupf-ee/v1/ee-subscriptions/{id}", delete(unsubscribe))
        .route("/n4/v1/sessions", post(establish))
        .route("/n4/v1/sessions/{id}/release", post(release))
        .route("/healthz", get(health))
        .with_state(upf)
}

async fn subscribe(State(upf): State<Arc<Upf>>, body: Bytes) -> Response {
    let req = match ees::decode_subscription_request(&body) {
        Ok(r) => r,
        Err(e) => return Problem::from(e).into_response(),
    };
    match upf.handle_subscribe(req) {
        Ok(resp) => {
            let location = format!("/nupf-ee/v1/ee-subscriptions/{}", resp.subscription_id);
            let body = ees::encode_subscription_response(&resp).expect("accepted request is valid");
            let mut r = json_bytes(StatusCode::CREATED, body);
            r.headers_mut().insert(header::LOCATION, location.parse().expect("header value"));
            r
        }
        Err(e) => upf_problem(e).into_response(),
    }
}

async fn unsubscribe(State(upf): State<Arc<Upf>>, UrlPath(id): UrlPath<String>) -> Response {
    match upf.handle_unsubscribe(&id) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => upf_problem(e).into_response(),
    }
}

async fn establish(State(upf): State<Arc<Upf>>, Json(session): Json<PduSession>) -> Response {
    match upf.establish_session(session) {
        Ok(()) => StatusCode::CREATED.into_response(),
        Err(e) => upf_problem(e).into_response(),
    }
}

async fn release(State(upf): State<Arc<Upf>>, UrlPath(id): UrlPath<u32>) -> Response {
    match upf.release_pdu_session(id) {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => upf_problem(e).into_response(),
    }
}

async fn health(State(upf): State<Arc<Upf>>) -> Response {
    Json(serde_json::json!({ "status": "ok", "subscriptions": upf.subscriber_count() })).into_response()
}

/// Periodically runs the notifier and delivers reports off the lock.
///
/// A failed delivery is retried once on the next tick, then dropped.
pub fn spawn_notifier(upf: Arc<Upf>) -> JoinHandle<()> {
    tokio::spawn(async move {
        let client = http::client(DELIVERY_TIMEOUT);
        let retries: Arc<Mutex<Vec<Delivery>>> = Arc::new(Mutex::new(Vec::new()));
        let mut ticker = tokio::time::interval(NOTIFIER_CADENCE);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticker.tick().await;
            let due = upf.notifier_tick(Utc::now());
            let retry: Vec<Delivery> = std::mem::take(&mut *retries.lock());
            if due.is_empty() && retry.is_empty() {
                continue;
            }
            let client = client.clone();
            let retries = retries.clone();
            tokio::spawn(async move {
                let fresh = futures::future::join_all(due.into_iter().map(|d| deliver(&client, d)));
                let again = futures::future::join_all(retry.into_iter().map(|d| deliver(&client, d)));
                let (fresh, again) = futures::join!(fresh, again);
                let failed: Vec<Delivery> = fresh.into_iter().flatten().collect();
                for d in again.into_iter().flatten() {
                    tracing::warn!("dropping EES notification for {} after retry", d.notify_uri);
                }
                retries.lock().extend(failed);
            });
        }
    })
}

/// Returns the delivery back on failure.
async fn deliver(client: &reqwest::Client, d: Delivery) -> Option<Delivery> {
    let body = match ees::encode_notification(&d.notification) {
        Ok(b) => b,
        Err(e) => {
            tracing::error!("refusing to send invalid notification: {e}");
            return None;
        }
    };
    let res = client
        .post(&d.notify_uri)
        .header(header::CONTENT_TYPE, http::JSON)
        .body(body)
        .send()
        .await;
    match res {
        Ok(r) if r.status().is_success() => None,
        Ok(r) => {
            tracing::warn!("notify {} answered {}", d.notify_uri, r.status());
            Some(d)
        }
        Err(e) => {
            tracing::warn!("notify {} failed: {e}", d.notify_uri);
            Some(d)
        }
    }
}

// ---- length-prefixed ingestion frames -------------------------------------

pub fn encode_frame(p: &PacketDescriptor) -> Vec<u8> {
    let body = serde_json::to_vec(p).expect("descriptor serializes");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_frame_body(body: &[u8]) -> Result<PacketDescriptor, UpfError> {
    let p: PacketDescriptor =
        serde_json::from_slice(body).map_err(|e| UpfError::InvalidPacket(e.to_string()))?;
    p.validate()?;
    Ok(p)
}

/// Blocking frame writer for clients on plain threads.
pub fn write_frame(stream: &mut impl Write, p: &PacketDescriptor) -> std::io::Result<()> {
    stream.write_all(&encode_frame(p))
}

/// Blocking frame reader; returns `None` on clean EOF.
pub fn read_frame(stream: &mut impl Read) -> std::io::Result<Option<PacketDescriptor>> {
    let mut len = [0u8; 4];
    match stream.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    decode_frame_body(&body)
        .map(Some)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

/// Accepts ingestion connections. PROBE packets forwarded on an ACTIVE
/// session are echoed back on the same connection.
pub fn spawn_ingest(upf: Arc<Upf>, listener: TcpListener) -> JoinHandle<()> {
    tokio::spawn(async move {
        loop {
            let (stream, peer) = match listener.accept().await {
                Ok(s) => s,
                Err(e) => {
                    tracing::warn!("ingest accept failed: {e}");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            let upf = upf.clone();
            tokio::spawn(async move {
                if let Err(e) = ingest_connection(upf, stream).await {
                    tracing::debug!("ingest connection {peer} closed: {e}");
                }
            });
        }
    })
}

async fn ingest_connection(upf: Arc<Upf>, mut stream: TcpStream) -> std::io::Result<()> {
    let mut len = [0u8; 4];
    let mut rejected = 0u64;
    loop {
        if stream.read_exact(&mut len).await.is_err() {
            return Ok(());
        }
        let n = u32::from_be_bytes(len) as usize;
        if n > MAX_FRAME {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "frame too large"));
        }
        let mut body = vec![0u8; n];
        stream.read_exact(&mut body).await?;
        let p = match decode_frame_body(&body) {
            Ok(p) => p,
            Err(e) => {
                rejected += 1;
                tracing::debug!("rejected descriptor #{rejected}: {e}");
                continue;
            }
        };
        if upf.ingest_packet(&p) == ForwardDecision::Forwarded && p.kind == PacketKind::Probe {
            stream.write_all(&encode_frame(&p)).await?;
        }
    }
}

/// Handles of a running UPF.
pub struct UpfRuntime {
    pub http: ServerHandle,
    pub ingest_addr: std::net::SocketAddr,
    tasks: Vec<JoinHandle<()>>,
}

impl UpfRuntime {
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

pub async fn start(upf: Arc<Upf>, cfg: &UpfConfig) -> std::io::Result<UpfRuntime> {
    for s in &cfg.sessions {
        if let Err(e) = upf.establish_session(s.clone()) {
            tracing::warn!("skipping configured session: {e}");
        }
    }
    let http_listener = http::bind(&format!("{}:{}", cfg.listen_addr, cfg.ee_port)).await?;
    let ingest_listener = TcpListener::bind(format!("{}:{}", cfg.listen_addr, cfg.ingest_port)).await?;
    let ingest_addr = ingest_listener.local_addr()?;
    let http = http::serve(http_listener, router(upf.clone())).await?;
    let tasks = vec![spawn_notifier(upf.clone()), spawn_ingest(upf, ingest_listener)];
    Ok(UpfRuntime { http, ingest_addr, tasks })
}
