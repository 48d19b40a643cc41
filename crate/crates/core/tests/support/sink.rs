//! HTTP endpoint that records every POSTed body with its arrival time.

#![allow(dead_code)]

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use nwdaf_loop::http::{self, ServerHandle};
use parking_lot::Mutex;

pub type Received = Arc<Mutex<Vec<(Instant, Bytes)>>>;

pub struct Sink {
    pub server: ServerHandle,
    pub received: Received,
}

impl Sink {
    pub async fn start() -> Sink {
        let received: Received = Arc::default();
        let router = Router::new()
            .route(
                "/notify",
                post(|State(r): State<Received>, body: Bytes| async move {
                    r.lock().push((Instant::now(), body));
                    StatusCode::NO_CONTENT
                }),
            )
            .with_state(received.clone());
        let server = http::serve(http::bind("127.0.0.1:0").await.unwrap(), router).await.unwrap();
        Sink { server, received }
    }

    pub fn uri(&self) -> String {
        format!("{}/notify", self.server.base_uri())
    }

    pub fn bodies(&self) -> Vec<Bytes> {
        self.received.lock().iter().map(|(_, b)| b.clone()).collect()
    }

    pub fn arrivals(&self) -> Vec<Instant> {
        self.received.lock().iter().map(|(t, _)| *t).collect()
    }
}
