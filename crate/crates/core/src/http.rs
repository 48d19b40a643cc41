//! HTTP plumbing shared by every service: problem responses, a bounded
//! client, exponential backoff and a server spawner.

use std::net::SocketAddr;
use std::time::Duration;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::ees::CodecError;

pub const JSON: &str = "application/json";

/// Problem details body returned on every error.
#[derive(Debug, Serialize)]
pub struct Problem {
    pub status: u16,
    pub title: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Problem {
    pub fn new(status: StatusCode, cause: &str, detail: impl Into<String>) -> Self {
        Problem {
            status: status.as_u16(),
            title: status.canonical_reason().unwrap_or("error").to_string(),
            cause: Some(cause.to_string()),
            detail: Some(detail.into()),
        }
    }
}

impl IntoResponse for Problem {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, [(axum::http::header::CONTENT_TYPE, "application/problem+json")], axum::Json(self)).into_response()
    }
}

impl From<CodecError> for Problem {
    fn from(e: CodecError) -> Self {
        let cause = match &e {
            CodecError::MalformedJson(_) => "MALFORMED_JSON",
            CodecError::SchemaViolation { .. } => "SCHEMA_VIOLATION",
            CodecError::UnknownEnumToken { .. } => "UNKNOWN_ENUM_TOKEN",
            CodecError::InvariantViolation(_) => "INVARIANT_VIOLATION",
        };
        Problem::new(StatusCode::BAD_REQUEST, cause, e.to_string())
    }
}

/// Raw JSON bytes response with a status code.
pub fn json_bytes(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(axum::http::header::CONTENT_TYPE, JSON)], body).into_response()
}

pub fn client(timeout: Duration) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(timeout)
        .connect_timeout(timeout)
        .no_proxy()
        .build()
        .expect("http client builds")
}

/// Exponential backoff: 100 ms doubling, capped.
#[derive(Debug, Clone)]
pub struct Backoff {
    next: Duration,
    cap: Duration,
}

impl Backoff {
    pub fn new(cap: Duration) -> Self {
        Backoff { next: Duration::from_millis(100), cap }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.cap);
        d
    }
}

/// Running HTTP server; dropping the handle leaves it running, `shutdown` stops it.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl ServerHandle {
    pub fn base_uri(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

pub async fn serve(listener: TcpListener, router: Router) -> std::io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let (stop, mut rx) = watch::channel(false);
    let task = tokio::spawn(async move {
        let shutdown = async move {
            while !*rx.borrow() {
                if rx.changed().await.is_err() {
                    break;
                }
            }
        };
        if let Err(e) = axum::serve(listener, router).with_graceful_shutdown(shutdown).await {
            tracing::error!("server on {addr} failed: {e}");
        }
    });
    Ok(ServerHandle { addr, stop, task })
}

pub async fn bind(addr: &str) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}
