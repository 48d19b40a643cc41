//! Simulated SMF: subscribes to NWDAF abnormal-behaviour analytics and
//! releases the PDU sessions of flagged UEs at the UPF.

pub mod service;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use chrono::Utc;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::ees::{self, AbnormalBehaviourNotification, AnalyticsEventId, AnalyticsSubscription, Timestamp};
use crate::events::EventLog;
use crate::http::{self, Backoff};
use crate::upf::SessionState;

pub const RELEASE_TIMEOUT: Duration = Duration::from_secs(2);
pub const SUBSCRIBE_BACKOFF_CAP: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UeSessionBinding {
    pub ue_ipv4_addr: Ipv4Addr,
    pub pdu_session_id: u32,
    #[serde(default = "active")]
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::ees::rfc3339::option")]
    pub released_at: Option<Timestamp>,
}

fn active() -> SessionState {
    SessionState::Active
}

impl UeSessionBinding {
    pub fn new(ue_ipv4_addr: Ipv4Addr, pdu_session_id: u32) -> Self {
        UeSessionBinding { ue_ipv4_addr, pdu_session_id, state: SessionState::Active, released_at: None }
    }
}

/// Chooses which UEs of a notification to act on. A PCF-driven rule would
/// plug in here.
pub trait MitigationPolicy: Send + Sync {
    fn targets(&self, n: &AbnormalBehaviourNotification) -> Vec<Ipv4Addr>;
}

/// Releases every UE listed in any exception.
pub struct ReleaseFlagged;

impl MitigationPolicy for ReleaseFlagged {
    fn targets(&self, n: &AbnormalBehaviourNotification) -> Vec<Ipv4Addr> {
        let unique: BTreeSet<Ipv4Addr> = n.flagged_ues().into_iter().collect();
        unique.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MitigationAction {
    #[serde(rename_all = "camelCase")]
    Released { ue: Ipv4Addr, pdu_session_id: u32 },
    #[serde(rename_all = "camelCase")]
    AlreadyReleased { ue: Ipv4Addr },
    #[serde(rename_all = "camelCase")]
    UnknownUe { ue: Ipv4Addr },
    #[serde(rename_all = "camelCase")]
    ReleaseFailed { ue: Ipv4Addr, error: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SmfError {
    #[error("UE {0} is banned for the lifetime of the scenario")]
    Banned(Ipv4Addr),
    #[error("UE {0} already has a session")]
    AlreadyBound(Ipv4Addr),
}

pub struct Smf {
    bindings: Mutex<BTreeMap<Ipv4Addr, UeSessionBinding>>,
    banned: Mutex<BTreeSet<Ipv4Addr>>,
    upf_uri: String,
    client: reqwest::Client,
    events: EventLog,
    serial: tokio::sync::Mutex<()>,
    subscription: tokio::sync::Mutex<Option<String>>,
    policy: Box<dyn MitigationPolicy>,
    release_calls: AtomicU64,
}

impl Smf {
    pub fn new(upf_uri: impl Into<String>, bindings: Vec<UeSessionBinding>, events: EventLog) -> Self {
        Self::with_policy(upf_uri, bindings, events, Box::new(ReleaseFlagged))
    }

    pub fn with_policy(
        upf_uri: impl Into<String>,
        bindings: Vec<UeSessionBinding>,
        events: EventLog,
        policy: Box<dyn MitigationPolicy>,
    ) -> Self {
        Smf {
            bindings: Mutex::new(bindings.into_iter().map(|b| (b.ue_ipv4_addr, b)).collect()),
            banned: Mutex::new(BTreeSet::new()),
            upf_uri: upf_uri.into(),
            client: http::client(RELEASE_TIMEOUT),
            events,
            serial: tokio::sync::Mutex::new(()),
            subscription: tokio::sync::Mutex::new(None),
            policy,
            release_calls: AtomicU64::new(0),
        }
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    pub fn binding(&self, ue: Ipv4Addr) -> Option<UeSessionBinding> {
        self.bindings.lock().get(&ue).cloned()
    }

    pub fn bindings(&self) -> Vec<UeSessionBinding> {
        self.bindings.lock().values().cloned().collect()
    }

    /// Release requests sent to the UPF so far.
    pub fn release_calls(&self) -> u64 {
        self.release_calls.load(Ordering::Relaxed)
    }

    /// Binds a new session for `ue`; refused once the UE has been banned.
    pub fn bind_session(&self, ue: Ipv4Addr, pdu_session_id: u32) -> Result<(), SmfError> {
        if self.banned.lock().contains(&ue) {
            return Err(SmfError::Banned(ue));
        }
        let mut b = self.bindings.lock();
        if b.get(&ue).is_some_and(|s| s.state == SessionState::Active) {
            return Err(SmfError::AlreadyBound(ue));
        }
        b.insert(ue, UeSessionBinding::new(ue, pdu_session_id));
        Ok(())
    }

    async fn release(&self, ue: Ipv4Addr, id: u32) -> MitigationAction {
        self.release_calls.fetch_add(1, Ordering::Relaxed);
        self.events.record("smf", "release_requested", json!({ "ue": ue, "pduSessionId": id }));
        let url = format!("{}/n4/v1/sessions/{id}/release", self.upf_uri);
        let error = match self.client.post(&url).send().await {
            Ok(r) if r.status().is_success() => None,
            Ok(r) => Some(format!("UPF answered {}", r.status())),
            Err(e) => Some(e.to_string()),
        };
        match error {
            None => {
                let at = self.events.record("smf", "ue_released", json!({ "ue": ue, "pduSessionId": id }));
                if let Some(b) = self.bindings.lock().get_mut(&ue) {
                    b.state = SessionState::Released;
                    b.released_at = Some(at);
                }
                self.banned.lock().insert(ue);
                MitigationAction::Released { ue, pdu_session_id: id }
            }
            Some(error) => {
                tracing::warn!("release of {ue} failed: {error}");
                MitigationAction::ReleaseFailed { ue, error }
            }
        }
    }

    /// Releases the sessions of the UEs chosen by the policy. Notifications
    /// are handled one at a time; releases within one run concurrently.
    pub async fn handle_nwdaf_notification(&self, n: &AbnormalBehaviourNotification) -> Vec<MitigationAction> {
        let _serial = self.serial.lock().await;
        let mut actions = Vec::new();
        let mut pending = Vec::new();
        {
            let bindings = self.bindings.lock();
            for ue in self.policy.targets(n) {
                match bindings.get(&ue) {
                    None => {
                        tracing::info!("notification names unknown UE {ue}");
                        actions.push(MitigationAction::UnknownUe { ue });
                    }
                    Some(b) if b.state == SessionState::Released => actions.push(MitigationAction::AlreadyReleased { ue }),
                    Some(b) => pending.push((ue, b.pdu_session_id)),
                }
            }
        }
        let released = futures::future::join_all(pending.into_iter().map(|(ue, id)| self.release(ue, id))).await;
        actions.extend(released);
        actions
    }

    /// Places the analytics subscription once; later calls return the same id.
    pub async fn smf_subscribe(&self, nwdaf_uri: &str, period_seconds: u32, notify_uri: &str) -> String {
        let mut current = self.subscription.lock().await;
        if let Some(id) = current.as_ref() {
            return id.clone();
        }
        let sub = AnalyticsSubscription {
            subscription_id: String::new(),
            event_id: AnalyticsEventId::AbnormalBehaviour,
            exception_ids: None,
            notify_uri: notify_uri.to_string(),
            period_seconds,
        };
        let body = ees::encode_analytics_subscription(&sub).expect("subscription encodes");
        let url = format!("{nwdaf_uri}/nnwdaf-eventssubscription/v1/subscriptions");
        let mut backoff = Backoff::new(SUBSCRIBE_BACKOFF_CAP);
        loop {
            let res = self
                .client
                .post(&url)
                .header(axum::http::header::CONTENT_TYPE, http::JSON)
                .body(body.clone())
                .send()
                .await;
            let err = match res {
                Ok(r) if r.status().is_success() => match r.bytes().await.map(|b| ees::decode_analytics_subscription(&b)) {
                    Ok(Ok(created)) => {
                        self.events.record(
                            "smf",
                            "nwdaf_subscribed",
                            json!({ "subscriptionId": created.subscription_id, "periodSeconds": period_seconds }),
                        );
                        *current = Some(created.subscription_id.clone());
                        return created.subscription_id;
                    }
                    Ok(Err(e)) => e.to_string(),
                    Err(e) => e.to_string(),
                },
                Ok(r) => format!("NWDAF answered {}", r.status()),
                Err(e) => e.to_string(),
            };
            tracing::warn!("NWDAF subscription failed: {err}");
            tokio::time::sleep(backoff.next_delay()).await;
        }
    }

    pub async fn subscription_id(&self) -> Option<String> {
        self.subscription.lock().await.clone()
    }

    pub fn now() -> Timestamp {
        Utc::now()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ees::{ExceptionId, ExceptionReport};

    fn notification(ues: &[[u8; 4]]) -> AbnormalBehaviourNotification {
        AbnormalBehaviourNotification {
            subscription_id: "s".into(),
            time_stamp: Utc::now(),
            exceptions: ues
                .iter()
                .map(|u| ExceptionReport {
                    excep_id: ExceptionId::SuspicionOfDdosAttack,
                    ue_ipv4_addrs: vec![Ipv4Addr::from(*u)],
                    pdu_session_ids: vec![],
                    confidence: 0.9,
                })
                .collect(),
        }
    }

    #[tokio::test]
    async fn empty_and_unknown_notifications_take_no_release_action() {
        let smf = Smf::new("http://127.0.0.1:1", vec![UeSessionBinding::new(Ipv4Addr::new(10, 42, 0, 2), 1)], EventLog::new());
        assert!(smf.handle_nwdaf_notification(&notification(&[])).await.is_empty());
        let a = smf.handle_nwdaf_notification(&notification(&[[10, 42, 0, 9]])).await;
        assert_eq!(a, vec![MitigationAction::UnknownUe { ue: Ipv4Addr::new(10, 42, 0, 9) }]);
        assert_eq!(smf.release_calls(), 0);
    }

    #[tokio::test]
    async fn failed_release_leaves_binding_active() {
        let ue = Ipv4Addr::new(10, 42, 0, 2);
        let smf = Smf::new("http://127.0.0.1:1", vec![UeSessionBinding::new(ue, 1)], EventLog::new());
        let a = smf.handle_nwdaf_notification(&notification(&[[10, 42, 0, 2]])).await;
        assert!(matches!(a[0], MitigationAction::ReleaseFailed { .. }));
        assert_eq!(smf.binding(ue).unwrap().state, SessionState::Active);
        assert!(smf.bind_session(ue, 2).is_err());
    }

    #[test]
    fn policy_deduplicates_targets() {
        let n = notification(&[[10, 42, 0, 2], [10, 42, 0, 2]]);
        assert_eq!(ReleaseFlagged.targets(&n), vec![Ipv4Addr::new(10, 42, 0, 2)]);
    }
}
