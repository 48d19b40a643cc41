//! Append-only report store: a JSONL file synced on every append plus an
//! in-memory time index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::ees::{self, rfc3339, EesNotification, Timestamp};

#[derive(Debug, Clone, PartialEq)]
pub struct StoredUsageReport {
    pub received_at: Timestamp,
    pub notification: EesNotification,
    pub source_upf: String,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Line {
    #[serde(with = "rfc3339")]
    received_at: Timestamp,
    source_upf: String,
    notification: Value,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codec(#[from] ees::CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Stored,
    Duplicate,
}

/// What `open` found on disk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub loaded: usize,
    pub skipped: usize,
    pub truncated_bytes: u64,
}

type DedupKey = (String, Timestamp, Ipv4Addr);

#[derive(Default)]
pub struct ReportStore {
    file: Option<File>,
    path: Option<PathBuf>,
    reports: Vec<StoredUsageReport>,
    by_time: BTreeMap<Timestamp, Vec<usize>>,
    seen: HashSet<DedupKey>,
    last_received: HashMap<String, Timestamp>,
}

fn dedup_key(n: &EesNotification) -> DedupKey {
    (n.subscription_id.clone(), n.time_stamp, n.ue_ipv4_addr)
}

fn encode_line(r: &StoredUsageReport) -> Result<Vec<u8>, StoreError> {
    let notification: Value =
        serde_json::from_slice(&ees::encode_notification(&r.notification)?).expect("encoder emits JSON");
    let mut out = serde_json::to_vec(&Line {
        received_at: r.received_at,
        source_upf: r.source_upf.clone(),
        notification,
    })
    .expect("line serializes");
    out.push(b'\n');
    Ok(out)
}

fn decode_line(raw: &[u8]) -> Option<StoredUsageReport> {
    let line: Line = serde_json::from_slice(raw).ok()?;
    let body = serde_json::to_vec(&line.notification).ok()?;
    let notification = ees::decode_notification(&body).ok()?;
    Some(StoredUsageReport { received_at: line.received_at, notification, source_upf: line.source_upf })
}

impl ReportStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates a store file and reloads it. A torn final line left by
    /// a crash is cut off; other unreadable lines are skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, LoadStats), StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut store = ReportStore::default();
        let mut stats = LoadStats::default();
        let raw = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut good_end = 0usize;
        let mut offset = 0usize;
        while offset < raw.len() {
            let rest = &raw[offset..];
            let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
                break;
            };
            let line = &rest[..nl];
            offset += nl + 1;
            if line.iter().all(u8::is_ascii_whitespace) {
                good_end = offset;
                continue;
            }
            match decode_line(line) {
                Some(r) => {
                    store.index(r);
                    stats.loaded += 1;
                }
                None => stats.skipped += 1,
            }
            good_end = offset;
        }
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        if good_end < raw.len() {
            stats.truncated_bytes = (raw.len() - good_end) as u64;
            file.set_len(good_end as u64)?;
            file.sync_all()?;
        }
        store.file = Some(file);
        store.path = Some(path);
        Ok((store, stats))
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn index(&mut self, r: StoredUsageReport) {
        self.seen.insert(dedup_key(&r.notification));
        let last = self.last_received.entry(r.source_upf.clone()).or_insert(r.received_at);
        *last = (*last).max(r.received_at);
        self.by_time.entry(r.notification.time_stamp).or_default().push(self.reports.len());
        self.reports.push(r);
    }

    /// Appends a report and syncs it to disk before returning. A repeated
    /// (subscriptionId, timeStamp, UE) triple is acknowledged without storing.
    pub fn append(
        &mut self,
        notification: EesNotification,
        source_upf: &str,
        now: Timestamp,
    ) -> Result<(AppendOutcome, Option<StoredUsageReport>), StoreError> {
        if self.seen.contains(&dedup_key(&notification)) {
            return Ok((AppendOutcome::Duplicate, None));
        }
        let received_at = self.last_received.get(source_upf).map_or(now, |last| now.max(*last));
        let report = StoredUsageReport { received_at, notification, source_upf: source_upf.to_string() };
        let line = encode_line(&report)?;
        if let Some(f) = self.file.as_mut() {
            f.write_all(&line)?;
            f.sync_data()?;
        }
        self.index(report.clone());
        Ok((AppendOutcome::Stored, Some(report)))
    }

    /// Reports whose timeStamp lies in `[start, end]`, optionally for one UE,
    /// ordered by timeStamp then arrival.
    pub fn query(&self, start: Timestamp, end: Timestamp, ue: Option<Ipv4Addr>) -> Vec<StoredUsageReport> {
        if start > end {
            return Vec::new();
        }
        self.by_time
            .range(start..=end)
            .flat_map(|(_, idx)| idx.iter().map(|&i| &self.reports[i]))
            .filter(|r| ue.is_none_or(|u| r.notification.ue_ipv4_addr == u))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn earliest(&self) -> Option<Timestamp> {
        self.by_time.keys().next().copied()
    }
}
