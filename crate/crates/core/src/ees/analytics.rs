//! Northbound analytics messages: abnormal-behaviour subscriptions and
//! notifications exchanged between the NWDAF and its consumers.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::Serialize;

use super::codec::{check_notify_uri, parse_ipv4, parse_json, CodecError, CodecResult, Obj};
use super::types::{rfc3339, token_enum, Timestamp, Token};

token_enum! {
    AnalyticsEventId {
        AbnormalBehaviour => "ABNORMAL_BEHAVIOUR",
    }
}

token_enum! {
    ExceptionId {
        SuspicionOfDdosAttack => "SUSPICION_OF_DDOS_ATTACK",
        TooFrequentServiceAccess => "TOO_FREQUENT_SERVICE_ACCESS",
        UnexpectedUeLocation => "UNEXPECTED_UE_LOCATION",
        UnexpectedRadioLinkFailures => "UNEXPECTED_RADIO_LINK_FAILURES",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyticsSubscription {
    #[serde(skip_serializing_if = "String::is_empty")]
    pub subscription_id: String,
    pub event_id: AnalyticsEventId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exception_ids: Option<BTreeSet<ExceptionId>>,
    pub notify_uri: String,
    pub period_seconds: u32,
}

impl AnalyticsSubscription {
    /// True when `excep` passes this subscription's exception filter.
    pub fn wants(&self, excep: ExceptionId) -> bool {
        self.exception_ids.as_ref().is_none_or(|ids| ids.contains(&excep))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExceptionReport {
    pub excep_id: ExceptionId,
    pub ue_ipv4_addrs: Vec<Ipv4Addr>,
    pub pdu_session_ids: Vec<u32>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AbnormalBehaviourNotification {
    pub subscription_id: String,
    #[serde(with = "rfc3339")]
    pub time_stamp: Timestamp,
    pub exceptions: Vec<ExceptionReport>,
}

impl AbnormalBehaviourNotification {
    /// Every UE address named by any exception, in order of first appearance.
    pub fn flagged_ues(&self) -> Vec<Ipv4Addr> {
        let mut seen = Vec::new();
        for ue in self.exceptions.iter().flat_map(|e| e.ue_ipv4_addrs.iter()) {
            if !seen.contains(ue) {
                seen.push(*ue);
            }
        }
        seen
    }
}

pub fn decode_analytics_subscription(raw: &[u8]) -> CodecResult<AnalyticsSubscription> {
    let v = parse_json(raw)?;
    let o = Obj::root(&v)?;
    let subscription_id = o.opt_str("subscriptionId")?.unwrap_or_default().to_string();
    let event_id = o.token("eventId")?;
    let exception_ids = match o.get("exceptionIds") {
        None => None,
        Some(_) => Some(o.token_set("exceptionIds")?),
    };
    let notify_uri = o.str("notifyUri")?;
    check_notify_uri(notify_uri, &o.path("notifyUri"))?;
    let period = o.u64("periodSeconds")?;
    if period == 0 || period > u32::MAX as u64 {
        return Err(CodecError::schema(o.path("periodSeconds"), "must be >= 1"));
    }
    Ok(AnalyticsSubscription {
        subscription_id,
        event_id,
        exception_ids,
        notify_uri: notify_uri.to_string(),
        period_seconds: period as u32,
    })
}

pub fn decode_abnormal_behaviour(raw: &[u8]) -> CodecResult<AbnormalBehaviourNotification> {
    let v = parse_json(raw)?;
    let o = Obj::root(&v)?;
    let subscription_id = o.str("subscriptionId")?.to_string();
    let time_stamp = o.timestamp("timeStamp")?;
    let mut exceptions = Vec::new();
    for (i, item) in o.array("exceptions")?.iter().enumerate() {
        let e = o.element("exceptions", i, item)?;
        let excep_id = e.token("excepId")?;
        let ue_ipv4_addrs = e
            .array("ueIpv4Addrs")?
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let path = format!("{}[{}]", e.path("ueIpv4Addrs"), j);
                v.as_str()
                    .ok_or_else(|| CodecError::schema(&path, "expected string"))
                    .and_then(|s| parse_ipv4(s, &path))
            })
            .collect::<CodecResult<Vec<_>>>()?;
        let pdu_session_ids = e
            .opt_array("pduSessionIds")?
            .map(|ids| {
                ids.iter()
                    .map(|v| {
                        v.as_u64()
                            .and_then(|id| u32::try_from(id).ok())
                            .ok_or_else(|| CodecError::schema(e.path("pduSessionIds"), "expected u32"))
                    })
                    .collect::<CodecResult<Vec<_>>>()
            })
            .transpose()?
            .unwrap_or_default();
        let confidence = e.f64("confidence")?;
        if confidence > 1.0 {
            return Err(CodecError::schema(e.path("confidence"), "must lie in [0, 1]"));
        }
        exceptions.push(ExceptionReport { excep_id, ue_ipv4_addrs, pdu_session_ids, confidence });
    }
    Ok(AbnormalBehaviourNotification { subscription_id, time_stamp, exceptions })
}

pub fn encode_abnormal_behaviour(n: &AbnormalBehaviourNotification) -> CodecResult<Vec<u8>> {
    for e in &n.exceptions {
        if !(0.0..=1.0).contains(&e.confidence) {
            return Err(CodecError::InvariantViolation(format!("confidence {} outside [0, 1]", e.confidence)));
        }
    }
    Ok(serde_json::to_vec(n).expect("notification serializes"))
}

pub fn encode_analytics_subscription(s: &AnalyticsSubscription) -> CodecResult<Vec<u8>> {
    if s.period_seconds == 0 {
        return Err(CodecError::InvariantViolation("periodSeconds must be >= 1".into()));
    }
    check_notify_uri(&s.notify_uri, "notifyUri").map_err(|e| CodecError::InvariantViolation(e.to_string()))?;
    Ok(serde_json::to_vec(s).expect("subscription serializes"))
}
