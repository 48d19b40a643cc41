//! Simulated User Plane Function hosting the event exposure service.
//!
//! Three actors share a [`Upf`]: the control-plane server (subscribe,
//! unsubscribe, session release), the per-packet data preparation path
//! ([`Upf::ingest_packet`]) and the periodic notifier ([`Upf::notifier_tick`]).
//! The subscriber map and aggregate store live under one mutex; the
//! notifier only computes notifications under it and delivers them after
//! the lock is released.

pub mod aggregate;
pub mod service;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use chrono::Utc;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::ees::{
    self, rfc3339, EesNotification, EesSubscriptionRequest, EesSubscriptionResponse, EventType, FlowKey,
    Granularity, MeasurementType, SnssaiId, Timestamp, Token, UsageMeasurementItem,
};
use crate::events::EventLog;
use aggregate::{compute_measurements, trend_statistics, AggregateKey, AggregateRecord, WindowSummary, TREND_WINDOWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PacketDirection {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PacketKind {
    Data,
    Probe,
}

/// One packet as seen by the UPF; payload is never materialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PacketDescriptor {
    pub flow: FlowKey,
    pub pdu_session_id: u32,
    pub ue_ipv4_addr: Ipv4Addr,
    pub size_bytes: u32,
    pub direction: PacketDirection,
    pub kind: PacketKind,
    /// Monotonic nanoseconds on the sender's clock.
    pub timestamp: u64,
}

impl PacketDescriptor {
    pub fn validate(&self) -> Result<(), UpfError> {
        if self.size_bytes == 0 {
            return Err(UpfError::InvalidPacket("sizeBytes must be >= 1".into()));
        }
        let ue_side = match self.direction {
            PacketDirection::Uplink => self.flow.src_ip,
            PacketDirection::Downlink => self.flow.dst_ip,
        };
        if ue_side != self.ue_ipv4_addr {
            return Err(UpfError::InvalidPacket(format!(
                "{:?} packet must have the UE address {} on its UE side, found {}",
                self.direction, self.ue_ipv4_addr, ue_side
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Active,
    Released,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PduSession {
    pub pdu_session_id: u32,
    pub ue_ipv4_addr: Ipv4Addr,
    pub snssai: SnssaiId,
    #[serde(default = "default_dnn")]
    pub dnn: String,
    #[serde(default = "active")]
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "rfc3339::option")]
    pub released_at: Option<Timestamp>,
}

fn default_dnn() -> String {
    "internet".to_string()
}

fn active() -> SessionState {
    SessionState::Active
}

impl PduSession {
    pub fn new(pdu_session_id: u32, ue_ipv4_addr: Ipv4Addr, snssai: SnssaiId) -> Self {
        PduSession {
            pdu_session_id,
            ue_ipv4_addr,
            snssai,
            dnn: default_dnn(),
            state: SessionState::Active,
            released_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ForwardDecision {
    Forwarded,
    DroppedReleased,
    DroppedUnknownSession,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReleaseAck {
    pub pdu_session_id: u32,
    pub already_released: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpfError {
    #[error("none of the requested events is supported")]
    AllEventsUnsupported,
    #[error("unknown subscription `{0}`")]
    UnknownSubscription(String),
    #[error("unknown PDU session {0}")]
    UnknownSession(u32),
    #[error("PDU session {0} already exists")]
    SessionExists(u32),
    #[error("invalid packet: {0}")]
    InvalidPacket(String),
    #[error(transparent)]
    Codec(#[from] ees::CodecError),
}

/// Public view of a stored subscription.
#[derive(Debug, Clone, PartialEq)]
pub struct SubscriptionEntry {
    pub response: EesSubscriptionResponse,
    pub last_report_at: Timestamp,
    pub reports_sent: u32,
}

/// A notification ready to be POSTed.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub notify_uri: String,
    pub notification: EesNotification,
}

#[derive(Debug, Clone)]
pub struct UpfOptions {
    pub supported_events: BTreeSet<EventType>,
    pub supported_measurements: BTreeSet<MeasurementType>,
}

impl Default for UpfOptions {
    fn default() -> Self {
        UpfOptions {
            supported_events: EventType::ALL.iter().copied().collect(),
            supported_measurements: MeasurementType::ALL.iter().copied().collect(),
        }
    }
}

struct SubState {
    entry: SubscriptionEntry,
    records: HashMap<(u32, FlowKey), AggregateRecord>,
    session_history: HashMap<u32, VecDeque<WindowSummary>>,
    buckets: usize,
}

#[derive(Default)]
struct EesState {
    subs: BTreeMap<u64, SubState>,
    by_id: HashMap<String, u64>,
}

#[derive(Debug, Default)]
pub struct UpfCounters {
    pub forwarded: AtomicU64,
    pub forwarded_bytes: AtomicU64,
    pub dropped_released: AtomicU64,
    pub dropped_unknown: AtomicU64,
    pub release_requests: AtomicU64,
}

pub struct Upf {
    options: UpfOptions,
    sessions: RwLock<HashMap<u32, PduSession>>,
    ees: Mutex<EesState>,
    subscribers: AtomicUsize,
    next_id: AtomicU64,
    instance: String,
    pub counters: UpfCounters,
    events: EventLog,
}

impl Upf {
    pub fn new(options: UpfOptions, events: EventLog) -> Self {
        let instance = format!("{:08x}", rand::random::<u32>());
        Upf {
            options,
            sessions: RwLock::new(HashMap::new()),
            ees: Mutex::new(EesState::default()),
            subscribers: AtomicUsize::new(0),
            next_id: AtomicU64::new(1),
            instance,
            counters: UpfCounters::default(),
            events,
        }
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    // ---- sessions -------------------------------------------------------

    pub fn establish_session(&self, mut session: PduSession) -> Result<(), UpfError> {
        let mut sessions = self.sessions.write();
        if sessions.contains_key(&session.pdu_session_id) {
            return Err(UpfError::SessionExists(session.pdu_session_id));
        }
        session.state = SessionState::Active;
        session.released_at = None;
        self.events.record(
            "upf",
            "session_established",
            json!({ "pduSessionId": session.pdu_session_id, "ue": session.ue_ipv4_addr }),
        );
        sessions.insert(session.pdu_session_id, session);
        Ok(())
    }

    pub fn session(&self, id: u32) -> Option<PduSession> {
        self.sessions.read().get(&id).cloned()
    }

    /// Marks the session RELEASED. Releasing twice succeeds with `already_released`.
    pub fn release_pdu_session(&self, id: u32) -> Result<ReleaseAck, UpfError> {
        self.counters.release_requests.fetch_add(1, Ordering::Relaxed);
        let mut sessions = self.sessions.write();
        let session = sessions.get_mut(&id).ok_or(UpfError::UnknownSession(id))?;
        if session.state == SessionState::Released {
            return Ok(ReleaseAck { pdu_session_id: id, already_released: true });
        }
        let at = self.events.record(
            "upf",
            "session_released",
            json!({ "pduSessionId": id, "ue": session.ue_ipv4_addr }),
        );
        session.state = SessionState::Released;
        session.released_at = Some(at);
        Ok(ReleaseAck { pdu_session_id: id, already_released: false })
    }

    // ---- subscriptions --------------------------------------------------

    pub fn handle_subscribe(&self, req: EesSubscriptionRequest) -> Result<EesSubscriptionResponse, UpfError> {
        self.handle_subscribe_at(req, Utc::now())
    }

    pub fn handle_subscribe_at(
        &self,
        req: EesSubscriptionRequest,
        now: Timestamp,
    ) -> Result<EesSubscriptionResponse, UpfError> {
        ees::codec::validate_request(&req)?;
        let mut accepted = req;
        accepted.event_types.retain(|e| self.options.supported_events.contains(e));
        if accepted.event_types.is_empty() {
            return Err(UpfError::AllEventsUnsupported);
        }
        accepted.measurement_types.retain(|m| self.options.supported_measurements.contains(m));
        if accepted.measurement_types.is_empty() && accepted.event_types.contains(&EventType::UserDataUsageMeasures) {
            accepted.measurement_types = self.options.supported_measurements.clone();
        }
        let handle = self.next_id.fetch_add(1, Ordering::Relaxed);
        let subscription_id = format!("ees-{}-{}", self.instance, handle);
        let response = EesSubscriptionResponse { subscription_id: subscription_id.clone(), accepted };
        let buckets = response.accepted.reporting.period_seconds as usize + 1;
        let mut ees = self.ees.lock();
        ees.subs.insert(
            handle,
            SubState {
                entry: SubscriptionEntry { response: response.clone(), last_report_at: now, reports_sent: 0 },
                records: HashMap::new(),
                session_history: HashMap::new(),
                buckets,
            },
        );
        ees.by_id.insert(subscription_id.clone(), handle);
        self.subscribers.store(ees.subs.len(), Ordering::Release);
        drop(ees);
        self.events.record(
            "upf",
            "ees_subscribed",
            json!({ "subscriptionId": subscription_id, "period": response.accepted.reporting.period_seconds }),
        );
        Ok(response)
    }

    pub fn handle_unsubscribe(&self, subscription_id: &str) -> Result<(), UpfError> {
        let mut ees = self.ees.lock();
        let handle = ees
            .by_id
            .remove(subscription_id)
            .ok_or_else(|| UpfError::UnknownSubscription(subscription_id.to_string()))?;
        ees.subs.remove(&handle);
        self.subscribers.store(ees.subs.len(), Ordering::Release);
        Ok(())
    }

    pub fn subscription(&self, subscription_id: &str) -> Option<SubscriptionEntry> {
        let ees = self.ees.lock();
        ees.by_id.get(subscription_id).and_then(|h| ees.subs.get(h)).map(|s| s.entry.clone())
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.load(Ordering::Acquire)
    }

    /// Total number of live aggregate records across subscriptions.
    pub fn aggregate_count(&self) -> usize {
        self.ees.lock().subs.values().map(|s| s.records.len()).sum()
    }

    /// Snapshot of the current-window counters, keyed for deterministic ordering.
    pub fn aggregates(&self) -> BTreeMap<AggregateKey, AggregateRecord> {
        let ees = self.ees.lock();
        let mut out = BTreeMap::new();
        for (&handle, sub) in &ees.subs {
            for (&(pdu_session_id, flow), rec) in &sub.records {
                out.insert(AggregateKey { subscription: handle, pdu_session_id, flow }, rec.clone());
            }
        }
        out
    }

    // ---- data path ------------------------------------------------------

    /// Forwards one packet and, when anyone subscribed, updates its aggregates.
    #[inline]
    pub fn ingest_packet(&self, p: &PacketDescriptor) -> ForwardDecision {
        self.ingest_inner::<true>(p, Utc::now)
    }

    pub fn ingest_packet_at(&self, p: &PacketDescriptor, now: Timestamp) -> ForwardDecision {
        self.ingest_inner::<true>(p, || now)
    }

    /// Forwarding only; the aggregation hook is compiled out.
    #[inline]
    pub fn ingest_packet_baseline(&self, p: &PacketDescriptor) -> ForwardDecision {
        self.ingest_inner::<false>(p, Utc::now)
    }

    #[inline]
    fn ingest_inner<const EES: bool>(&self, p: &PacketDescriptor, now: impl FnOnce() -> Timestamp) -> ForwardDecision {
        let sessions = self.sessions.read();
        let Some(session) = sessions.get(&p.pdu_session_id) else {
            self.counters.dropped_unknown.fetch_add(1, Ordering::Relaxed);
            return ForwardDecision::DroppedUnknownSession;
        };
        if session.state == SessionState::Released {
            self.counters.dropped_released.fetch_add(1, Ordering::Relaxed);
            return ForwardDecision::DroppedReleased;
        }
        self.counters.forwarded.fetch_add(1, Ordering::Relaxed);
        self.counters.forwarded_bytes.fetch_add(u64::from(p.size_bytes), Ordering::Relaxed);
        if EES && self.subscribers.load(Ordering::Acquire) > 0 {
            self.aggregate(session, p, now());
        }
        ForwardDecision::Forwarded
    }

    fn aggregate(&self, session: &PduSession, p: &PacketDescriptor, now: Timestamp) {
        let key = p.flow.normalized_for(session.ue_ipv4_addr);
        let uplink = p.direction == PacketDirection::Uplink;
        let size = u64::from(p.size_bytes);
        let mut ees = self.ees.lock();
        for sub in ees.subs.values_mut() {
            let accepted = &sub.entry.response.accepted;
            if let Some(f) = &accepted.filters {
                if !f.matches(&session.dnn, &session.snssai, session.ue_ipv4_addr) {
                    continue;
                }
            }
            let second = (now - sub.entry.last_report_at).num_milliseconds().max(0) as usize / 1000;
            let buckets = sub.buckets;
            sub.records
                .entry((p.pdu_session_id, key))
                .or_insert_with(|| AggregateRecord::with_buckets(buckets))
                .add(uplink, size, second, now);
        }
    }

    // ---- notifier -------------------------------------------------------

    /// Emits every due report, resetting the window counters atomically with
    /// respect to ingestion. Subscriptions that reached `maxReports` or their
    /// expiry are removed.
    pub fn notifier_tick(&self, now: Timestamp) -> Vec<Delivery> {
        let sessions = self.sessions.read();
        let mut ees = self.ees.lock();
        let mut out = Vec::new();
        let mut finished = Vec::new();
        for (&handle, sub) in ees.subs.iter_mut() {
            let reporting = &sub.entry.response.accepted.reporting;
            if reporting.expiry.is_some_and(|exp| now >= exp) {
                finished.push(handle);
                continue;
            }
            let elapsed = now - sub.entry.last_report_at;
            if elapsed < chrono::Duration::seconds(i64::from(reporting.period_seconds)) {
                continue;
            }
            let window = elapsed.to_std().unwrap_or(Duration::ZERO);
            let start = sub.entry.last_report_at;
            out.extend(build_report(sub, &sessions, start, now, window));
            sub.entry.last_report_at = now;
            sub.entry.reports_sent += 1;
            if sub.entry.response.accepted.reporting.max_reports.is_some_and(|m| sub.entry.reports_sent >= m) {
                finished.push(handle);
            }
        }
        for handle in finished {
            if let Some(sub) = ees.subs.remove(&handle) {
                ees.by_id.remove(&sub.entry.response.subscription_id);
                self.events.record(
                    "upf",
                    "ees_subscription_ended",
                    json!({ "subscriptionId": sub.entry.response.subscription_id, "reportsSent": sub.entry.reports_sent }),
                );
            }
        }
        self.subscribers.store(ees.subs.len(), Ordering::Release);
        out
    }
}

/// Computes the notifications of one due subscription and closes its window.
fn build_report(
    sub: &mut SubState,
    sessions: &HashMap<u32, PduSession>,
    start: Timestamp,
    now: Timestamp,
    window: Duration,
) -> Vec<Delivery> {
    let accepted = sub.entry.response.accepted.clone();
    let wants_trends = accepted.event_types.contains(&EventType::UserDataUsageTrends);

    // Sessions covered: any with aggregates, plus ACTIVE ones passing the filter (heartbeat).
    let mut by_session: BTreeMap<u32, Vec<FlowKey>> = BTreeMap::new();
    for &(sid, flow) in sub.records.keys() {
        by_session.entry(sid).or_default().push(flow);
    }
    for s in sessions.values() {
        let passes = accepted.filters.as_ref().is_none_or(|f| f.matches(&s.dnn, &s.snssai, s.ue_ipv4_addr));
        if passes && s.state == SessionState::Active {
            by_session.entry(s.pdu_session_id).or_default();
        }
    }

    let mut measures: BTreeMap<u32, Vec<UsageMeasurementItem>> = BTreeMap::new();
    let mut trends: BTreeMap<u32, Vec<UsageMeasurementItem>> = BTreeMap::new();
    for (sid, flows) in by_session.iter_mut() {
        flows.sort();
        let m = measures.entry(*sid).or_default();
        let t = trends.entry(*sid).or_default();
        match accepted.granularity {
            Granularity::PerFlow => {
                for flow in flows.iter() {
                    let rec = sub.records.get_mut(&(*sid, *flow)).expect("record exists");
                    if rec.has_traffic() {
                        m.push(compute_measurements(rec, window, Granularity::PerFlow, &accepted.measurement_types, Some(flow)));
                    }
                    if wants_trends {
                        let mut history = rec.history.clone();
                        history.push_back(rec.summary(window));
                        while history.len() > TREND_WINDOWS {
                            history.pop_front();
                        }
                        if history.iter().any(|w| w.ul_bytes + w.dl_bytes > 0) {
                            t.push(UsageMeasurementItem {
                                flow_info: Some(ees::FlowInfo::for_flow(flow)),
                                throughput_statistics_measurement: Some(trend_statistics(&history)),
                                ..Default::default()
                            });
                        }
                    }
                }
            }
            Granularity::PerSession => {
                let mut merged = AggregateRecord::with_buckets(sub.buckets);
                for flow in flows.iter() {
                    merged.merge(&sub.records[&(*sid, *flow)]);
                }
                if merged.has_traffic() {
                    m.push(compute_measurements(&merged, window, Granularity::PerSession, &accepted.measurement_types, None));
                }
                if wants_trends {
                    let history = sub.session_history.entry(*sid).or_default();
                    history.push_back(merged.summary(window));
                    while history.len() > TREND_WINDOWS {
                        history.pop_front();
                    }
                    if history.iter().any(|w| w.ul_bytes + w.dl_bytes > 0) {
                        t.push(UsageMeasurementItem {
                            throughput_statistics_measurement: Some(trend_statistics(history)),
                            ..Default::default()
                        });
                    }
                }
            }
        }
    }

    // Close the window on every record; drop those idle for the whole trend horizon.
    for rec in sub.records.values_mut() {
        rec.close_window(window);
    }
    sub.records.retain(|_, rec| !rec.is_stale());
    sub.session_history.retain(|sid, h| {
        sub.records.keys().any(|(s, _)| s == sid) || h.iter().any(|w| w.ul_bytes + w.dl_bytes > 0)
    });

    let mut out = Vec::new();
    for event_type in &accepted.event_types {
        let items_by_session = match event_type {
            EventType::UserDataUsageMeasures => &mut measures,
            EventType::UserDataUsageTrends => &mut trends,
        };
        for (sid, items) in items_by_session.iter_mut() {
            let Some(session) = sessions.get(sid) else { continue };
            if session.state == SessionState::Released && items.is_empty() {
                continue;
            }
            out.push(Delivery {
                notify_uri: accepted.notify_uri.clone(),
                notification: EesNotification {
                    event_type: *event_type,
                    ue_ipv4_addr: session.ue_ipv4_addr,
                    snssai: session.snssai,
                    time_stamp: now,
                    start_time: start,
                    user_data_usage_measurements: std::mem::take(items),
                    subscription_id: sub.entry.response.subscription_id.clone(),
                },
            });
        }
    }
    out
}
