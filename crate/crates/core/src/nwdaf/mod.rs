//! NWDAF: collects UPF usage reports over its southbound interface, stores
//! them, and serves abnormal-behaviour analytics to northbound consumers.

pub mod service;
pub mod store;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

pub use store::{AppendOutcome, LoadStats, ReportStore, StoreError, StoredUsageReport};

use crate::ees::{
    AbnormalBehaviourNotification, AnalyticsSubscription, EesNotification, EesSubscriptionRequest, EventType,
    ExceptionReport, Granularity, MeasurementType, Timestamp,
};
use crate::engine::{Analysis, BotEngine, DetectionResult, EngineError, Label};
use crate::events::EventLog;

#[derive(Debug, Error)]
pub enum NwdafError {
    #[error("unknown analytics subscription {0}")]
    UnknownSubscription(String),
    #[error("periodSeconds must be at least 1")]
    BadPeriod,
}

/// Southbound subscription lifecycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "state", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SbiState {
    Idle,
    #[serde(rename_all = "camelCase")]
    Retrying { attempts: u32, last_error: String },
    #[serde(rename_all = "camelCase")]
    Subscribed { subscription_id: String, upf_uri: String },
}

struct NbiEntry {
    sub: AnalyticsSubscription,
    next_due: Timestamp,
    retry: Option<AbnormalBehaviourNotification>,
    running: bool,
}

/// A notification due for delivery to a consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct NbiDelivery {
    pub notify_uri: String,
    pub notification: AbnormalBehaviourNotification,
}

/// The southbound subscription the NWDAF places at the UPF.
pub fn collection_request(period_seconds: u32, notify_uri: &str) -> EesSubscriptionRequest {
    EesSubscriptionRequest::new(
        [EventType::UserDataUsageMeasures],
        [MeasurementType::VolumeMeasurement, MeasurementType::ThroughputMeasurement],
        Granularity::PerFlow,
        period_seconds,
        notify_uri,
    )
}

pub struct Nwdaf {
    store: RwLock<ReportStore>,
    engine: BotEngine,
    events: EventLog,
    subs: Mutex<BTreeMap<String, NbiEntry>>,
    next_sub: AtomicU64,
    engine_errors: AtomicU64,
    source_upf: RwLock<String>,
    sbi: Mutex<SbiState>,
    origin: Timestamp,
}

impl Nwdaf {
    pub fn new(store: ReportStore, engine: BotEngine, events: EventLog) -> Self {
        Nwdaf {
            store: RwLock::new(store),
            engine,
            events,
            subs: Mutex::new(BTreeMap::new()),
            next_sub: AtomicU64::new(1),
            engine_errors: AtomicU64::new(0),
            source_upf: RwLock::new("upf".into()),
            sbi: Mutex::new(SbiState::Idle),
            origin: Utc::now(),
        }
    }

    pub fn engine(&self) -> &BotEngine {
        &self.engine
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn engine_errors(&self) -> u64 {
        self.engine_errors.load(Ordering::Relaxed)
    }

    pub fn sbi_state(&self) -> SbiState {
        self.sbi.lock().clone()
    }

    pub(crate) fn set_sbi_state(&self, s: SbiState) {
        *self.sbi.lock() = s;
    }

    pub fn set_source_upf(&self, name: impl Into<String>) {
        *self.source_upf.write() = name.into();
    }

    pub fn report_count(&self) -> usize {
        self.store.read().len()
    }

    // ---- southbound -----------------------------------------------------

    /// Stores a UPF report; returns once it is durable.
    pub fn handle_upf_notification(&self, n: EesNotification) -> Result<AppendOutcome, StoreError> {
        let source = self.source_upf.read().clone();
        let ue = n.ue_ipv4_addr;
        let destinations: Vec<Ipv4Addr> = n
            .user_data_usage_measurements
            .iter()
            .filter_map(|i| i.flow_info.as_ref()?.flow_key())
            .map(|f| if f.src_ip == ue { f.dst_ip } else { f.src_ip })
            .collect();
        let sub = n.subscription_id.clone();
        let ts = n.time_stamp;
        let (outcome, stored) = self.store.write().append(n, &source, Utc::now())?;
        if let Some(r) = stored {
            self.events.record(
                "nwdaf",
                "report_stored",
                json!({
                    "ue": ue,
                    "subscriptionId": sub,
                    "timeStamp": crate::ees::format_timestamp(&ts),
                    "receivedAt": crate::ees::format_timestamp(&r.received_at),
                    "destinations": destinations,
                }),
            );
        }
        Ok(outcome)
    }

    pub fn query_reports(&self, start: Timestamp, end: Timestamp, ue: Option<Ipv4Addr>) -> Vec<StoredUsageReport> {
        self.store.read().query(start, end, ue)
    }

    // ---- northbound -----------------------------------------------------

    pub fn handle_analytics_subscribe(&self, mut s: AnalyticsSubscription, now: Timestamp) -> Result<String, NwdafError> {
        if s.period_seconds == 0 {
            return Err(NwdafError::BadPeriod);
        }
        let id = format!("nwdaf-sub-{}", self.next_sub.fetch_add(1, Ordering::Relaxed));
        s.subscription_id = id.clone();
        let next_due = now + chrono::Duration::seconds(i64::from(s.period_seconds));
        self.events.record("nwdaf", "analytics_subscribed", json!({ "subscriptionId": id, "notifyUri": s.notify_uri }));
        self.subs.lock().insert(id.clone(), NbiEntry { sub: s, next_due, retry: None, running: false });
        Ok(id)
    }

    pub fn handle_analytics_unsubscribe(&self, id: &str) -> Result<(), NwdafError> {
        self.subs.lock().remove(id).map(|_| ()).ok_or_else(|| NwdafError::UnknownSubscription(id.to_string()))
    }

    pub fn analytics_subscription_count(&self) -> usize {
        self.subs.lock().len()
    }

    /// Runs the engine over everything stored since the NWDAF started.
    pub async fn analyze(&self, now: Timestamp) -> Result<Analysis, EngineError> {
        let window = (self.origin.min(self.store.read().earliest().unwrap_or(self.origin)), now);
        let reports = self.query_reports(window.0, window.1, None);
        let started = std::time::Instant::now();
        let result = self.engine.analyze_window(&reports, window).await;
        match &result {
            Ok(a) => {
                let model_version = a.model.as_ref().map(|m| m.version);
                self.events.record(
                    "nwdaf",
                    "inference",
                    json!({ "durationMs": a.inference_time.as_secs_f64() * 1e3, "modelVersion": model_version, "rows": a.results.len() }),
                );
                self.events.record(
                    "nwdaf",
                    "analysis_completed",
                    json!({
                        "durationMs": started.elapsed().as_secs_f64() * 1e3,
                        "reports": reports.len(),
                        "ues": a.results.len(),
                        "anomalous": a.results.iter().filter(|r| r.label == Label::Anomalous).count(),
                    }),
                );
                for r in a.results.iter().filter(|r| r.label == Label::Anomalous) {
                    self.events.record(
                        "nwdaf",
                        "anomaly_detected",
                        json!({ "ue": r.ue_ipv4_addr, "confidence": r.confidence, "modelVersion": model_version }),
                    );
                }
            }
            Err(e) => {
                self.engine_errors.fetch_add(1, Ordering::Relaxed);
                self.events.record("nwdaf", "engine_error", json!({ "error": e.to_string() }));
            }
        }
        result
    }

    /// One-shot analytics request, unfiltered.
    pub async fn analytics_now(&self, now: Timestamp) -> Result<AbnormalBehaviourNotification, EngineError> {
        let a = self.analyze(now).await?;
        Ok(wrap_results("one-shot", None, &a.results, now))
    }

    /// Runs the analysis for every due subscription and returns the
    /// notifications to deliver, including retries of earlier failures.
    pub async fn nbi_dispatch_tick(&self, now: Timestamp) -> Vec<NbiDelivery> {
        let mut out = Vec::new();
        let mut due = Vec::new();
        {
            let mut subs = self.subs.lock();
            for e in subs.values_mut() {
                if let Some(n) = e.retry.take() {
                    out.push(NbiDelivery { notify_uri: e.sub.notify_uri.clone(), notification: n });
                }
                if e.running || e.next_due > now {
                    continue;
                }
                let period = chrono::Duration::seconds(i64::from(e.sub.period_seconds));
                while e.next_due <= now {
                    e.next_due += period;
                }
                e.running = true;
                due.push(e.sub.clone());
            }
        }
        if due.is_empty() {
            return out;
        }
        let analysis = self.analyze(now).await;
        let mut subs = self.subs.lock();
        for s in due {
            let Some(e) = subs.get_mut(&s.subscription_id) else {
                continue;
            };
            e.running = false;
            if let Ok(a) = &analysis {
                let n = wrap_results(&s.subscription_id, Some(&s), &a.results, now);
                out.push(NbiDelivery { notify_uri: s.notify_uri.clone(), notification: n });
            }
        }
        out
    }

    /// Queues a failed delivery for the next tick.
    pub fn delivery_failed(&self, d: NbiDelivery) {
        if let Some(e) = self.subs.lock().get_mut(&d.notification.subscription_id) {
            e.retry = Some(d.notification);
        }
    }
}

/// One exception entry per anomalous UE that passes the subscription filter.
pub fn wrap_results(
    subscription_id: &str,
    sub: Option<&AnalyticsSubscription>,
    results: &[DetectionResult],
    now: Timestamp,
) -> AbnormalBehaviourNotification {
    let exceptions = results
        .iter()
        .filter(|r| r.label == Label::Anomalous)
        .filter(|r| sub.is_none_or(|s| s.wants(r.excep_id)))
        .map(|r| ExceptionReport {
            excep_id: r.excep_id,
            ue_ipv4_addrs: vec![r.ue_ipv4_addr],
            pdu_session_ids: Vec::new(),
            confidence: r.confidence,
        })
        .collect();
    AbnormalBehaviourNotification { subscription_id: subscription_id.to_string(), time_stamp: now, exceptions }
}

/// Dispatch cadence of the northbound timer.
pub const DISPATCH_TICK: Duration = Duration::from_millis(20);
