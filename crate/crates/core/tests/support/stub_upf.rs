//! Stand-in UPF that records every release call and answers with a
//! configurable status.

#![allow(dead_code)]

use std::sync::atomic::{AtomicU16, Ordering};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use nwdaf_loop::http::{self, ServerHandle};
use parking_lot::Mutex;

#[derive(Clone, Default)]
pub struct StubState {
    pub calls: Arc<Mutex<Vec<u32>>>,
    pub status: Arc<AtomicU16>,
}

pub struct StubUpf {
    pub server: ServerHandle,
    pub state: StubState,
}

impl StubUpf {
    pub async fn start() -> StubUpf {
        let state = StubState::default();
        state.status.store(200, Ordering::SeqCst);
        let router = Router::new()
            .route(
                "/n4/v1/sessions/{id}/release",
                post(|State(s): State<StubState>, Path(id): Path<u32>| async move {
                    s.calls.lock().push(id);
                    StatusCode::from_u16(s.status.load(Ordering::SeqCst)).unwrap()
                }),
            )
            .with_state(state.clone());
        let server = http::serve(http::bind("127.0.0.1:0").await.unwrap(), router).await.unwrap();
        StubUpf { server, state }
    }

    pub fn uri(&self) -> String {
        self.server.base_uri()
    }

    pub fn calls(&self) -> Vec<u32> {
        self.state.calls.lock().clone()
    }

    pub fn set_status(&self, status: u16) {
        self.state.status.store(status, Ordering::SeqCst);
    }
}
