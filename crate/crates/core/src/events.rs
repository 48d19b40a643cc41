//! Timestamped cross-service event log.
//!
//! Every service records lifecycle and measurement events here. The log keeps
//! events in memory and, when given a path, also appends them as JSON lines so
//! separate processes can be merged afterwards.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::Utc;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ees::{rfc3339, Timestamp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(with = "rfc3339")]
    pub ts: Timestamp,
    pub service: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub data: Value,
}

#[derive(Default)]
struct Sink {
    events: Vec<Event>,
    file: Option<File>,
    last: Option<Timestamp>,
}

/// Shared, serialized event sink. Timestamps handed out are monotonic.
#[derive(Clone, Default)]
pub struct EventLog {
    inner: Arc<Mutex<Sink>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let log = EventLog::default();
        log.inner.lock().file = Some(file);
        Ok(log)
    }

    pub fn record(&self, service: &str, kind: &str, data: Value) -> Timestamp {
        let mut sink = self.inner.lock();
        let mut ts = Utc::now();
        if let Some(last) = sink.last {
            if ts < last {
                ts = last;
            }
        }
        sink.last = Some(ts);
        let event = Event { ts, service: service.to_string(), kind: kind.to_string(), data };
        if let Some(file) = sink.file.as_mut() {
            let mut line = serde_json::to_vec(&event).expect("event serializes");
            line.push(b'\n');
            if let Err(e) = file.write_all(&line) {
                tracing::warn!("event log write failed: {e}");
            }
        }
        sink.events.push(event);
        ts
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.inner.lock().events.clone()
    }

    pub fn find(&self, kind: &str) -> Vec<Event> {
        self.inner.lock().events.iter().filter(|e| e.kind == kind).cloned().collect()
    }
}

/// Reads a JSONL event file, skipping lines that do not parse (e.g. a torn tail).
pub fn read_events(path: impl AsRef<Path>) -> std::io::Result<Vec<Event>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(ev) = serde_json::from_str::<Event>(&line) {
            out.push(ev);
        }
    }
    Ok(out)
}
