//! Seeded generators of valid wire messages.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use chrono::{TimeZone, Utc};
use nwdaf_loop::ees::{
    AbnormalBehaviourNotification, AnalyticsEventId, AnalyticsSubscription, EesFilters, EesNotification,
    EesSubscriptionRequest, EesSubscriptionResponse, EventType, ExceptionId, ExceptionReport, FlowInfo,
    FlowKey, MeasurementType, ReportingMode, SnssaiId, ThroughputMeasurement,
    ThroughputStatisticsMeasurement, Timestamp, Token, UsageMeasurementItem, VolumeMeasurement,
};
use rand::seq::SliceRandom;
use rand::Rng;

const AWKWARD: &[&str] = &["", "a", "sub-1", "quote\"d", "back\\slash", "tab\there", "ünïcødé", "emoji 🛰", "/path?x=1"];

pub fn text(rng: &mut impl Rng) -> String {
    let mut s = (*AWKWARD.choose(rng).unwrap()).to_string();
    for _ in 0..rng.gen_range(0..6) {
        s.push(rng.gen_range(' '..='~'));
    }
    s
}

pub fn ipv4(rng: &mut impl Rng) -> Ipv4Addr {
    Ipv4Addr::from(rng.gen::<u32>())
}

/// Any instant in 2000..2100 with nanosecond resolution.
pub fn timestamp(rng: &mut impl Rng) -> Timestamp {
    let lo = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap().timestamp();
    let hi = Utc.with_ymd_and_hms(2100, 1, 1, 0, 0, 0).unwrap().timestamp();
    let nanos = match rng.gen_range(0..3) {
        0 => 0,
        1 => rng.gen_range(0..1000) * 1_000_000,
        _ => rng.gen_range(0..1_000_000_000),
    };
    Utc.timestamp_opt(rng.gen_range(lo..hi), nanos).unwrap()
}

fn subset<T: Token + Ord>(rng: &mut impl Rng, non_empty: bool) -> BTreeSet<T> {
    loop {
        let s: BTreeSet<T> = T::ALL.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if !(non_empty && s.is_empty()) {
            return s;
        }
    }
}

fn pick<T: Token>(rng: &mut impl Rng) -> T {
    *T::ALL.choose(rng).unwrap()
}

pub fn snssai(rng: &mut impl Rng) -> SnssaiId {
    SnssaiId::new(rng.gen(), rng.gen_bool(0.6).then(|| rng.gen_range(0..=SnssaiId::SD_MAX)))
}

pub fn notify_uri(rng: &mut impl Rng) -> String {
    let scheme = if rng.gen_bool(0.8) { "http" } else { "https" };
    let host = if rng.gen_bool(0.5) { ipv4(rng).to_string() } else { format!("nf{}.example", rng.gen_range(0..100)) };
    format!("{scheme}://{host}:{}/cb/{}", rng.gen_range(1..65535u32), rng.gen_range(0..1000))
}

pub fn request(rng: &mut impl Rng) -> EesSubscriptionRequest {
    let filters = rng.gen_bool(0.5).then(|| EesFilters {
        dnn: rng.gen_bool(0.5).then(|| text(rng)),
        snssai: rng.gen_bool(0.5).then(|| snssai(rng)),
        ue_ipv4_addr: rng.gen_bool(0.5).then(|| ipv4(rng)),
    });
    EesSubscriptionRequest {
        event_types: subset::<EventType>(rng, true),
        measurement_types: subset::<MeasurementType>(rng, false),
        granularity: pick(rng),
        reporting: ReportingMode {
            period_seconds: rng.gen_range(1..=u32::MAX),
            max_reports: rng.gen_bool(0.3).then(|| rng.gen_range(1..=u32::MAX)),
            expiry: rng.gen_bool(0.3).then(|| timestamp(rng)),
        },
        notify_uri: notify_uri(rng),
        filters,
    }
}

pub fn response(rng: &mut impl Rng) -> EesSubscriptionResponse {
    let mut id = text(rng);
    id.push('x');
    EesSubscriptionResponse { subscription_id: id, accepted: request(rng) }
}

pub fn flow_key(rng: &mut impl Rng) -> FlowKey {
    FlowKey { src_ip: ipv4(rng), dst_ip: ipv4(rng), src_port: rng.gen(), dst_port: rng.gen(), direction: pick(rng) }
}

fn rate(rng: &mut impl Rng) -> f64 {
    match rng.gen_range(0..3) {
        0 => 0.0,
        1 => f64::from(rng.gen::<u32>()),
        _ => rng.gen::<f64>() * 10f64.powi(rng.gen_range(-3..12)),
    }
}

pub fn item(rng: &mut impl Rng) -> UsageMeasurementItem {
    loop {
        let mut it = UsageMeasurementItem {
            flow_info: rng.gen_bool(0.7).then(|| {
                if rng.gen_bool(0.8) {
                    FlowInfo::for_flow(&flow_key(rng))
                } else {
                    FlowInfo { pack_filt_id: text(rng), f_dir: pick(rng) }
                }
            }),
            ..Default::default()
        };
        if rng.gen_bool(0.7) {
            let cap = 1u64 << rng.gen_range(0..48);
            it.volume_measurement = Some(VolumeMeasurement::from_counters(
                rng.gen_range(0..cap),
                rng.gen_range(0..cap),
                rng.gen_range(0..cap),
                rng.gen_range(0..cap),
            ));
        }
        if rng.gen_bool(0.5) {
            it.throughput_measurement = Some(ThroughputMeasurement { ul_throughput: rate(rng), dl_throughput: rate(rng) });
        }
        if rng.gen_bool(0.5) {
            let (ua, da) = (rate(rng), rate(rng));
            it.throughput_statistics_measurement = Some(ThroughputStatisticsMeasurement {
                ul_average: ua,
                ul_peak: ua + rate(rng),
                dl_average: da,
                dl_peak: da + rate(rng),
            });
        }
        if it.has_measurement() {
            return it;
        }
    }
}

pub fn notification(rng: &mut impl Rng) -> EesNotification {
    let a = timestamp(rng);
    let b = timestamp(rng);
    let (start_time, time_stamp) = if a <= b { (a, b) } else { (b, a) };
    EesNotification {
        event_type: pick(rng),
        ue_ipv4_addr: ipv4(rng),
        snssai: snssai(rng),
        time_stamp,
        start_time,
        user_data_usage_measurements: (0..rng.gen_range(0..6)).map(|_| item(rng)).collect(),
        subscription_id: text(rng),
    }
}

pub fn analytics_subscription(rng: &mut impl Rng) -> AnalyticsSubscription {
    AnalyticsSubscription {
        subscription_id: text(rng),
        event_id: AnalyticsEventId::AbnormalBehaviour,
        exception_ids: rng.gen_bool(0.5).then(|| subset::<ExceptionId>(rng, false)),
        notify_uri: notify_uri(rng),
        period_seconds: rng.gen_range(1..=u32::MAX),
    }
}

pub fn abnormal_behaviour(rng: &mut impl Rng) -> AbnormalBehaviourNotification {
    AbnormalBehaviourNotification {
        subscription_id: text(rng),
        time_stamp: timestamp(rng),
        exceptions: (0..rng.gen_range(0..4))
            .map(|_| ExceptionReport {
                excep_id: pick(rng),
                ue_ipv4_addrs: (0..rng.gen_range(0..4)).map(|_| ipv4(rng)).collect(),
                pdu_session_ids: (0..rng.gen_range(0..3)).map(|_| rng.gen()).collect(),
                confidence: if rng.gen_bool(0.2) { f64::from(rng.gen_range(0..=1u8)) } else { rng.gen() },
            })
            .collect(),
    }
}

/// The sample per-flow notification with its elided parts filled in.
pub const SAMPLE_NOTIFICATION: &str = r#"{"eventType": "USER_DATA_USAGE_MEASURES",
  "ueIpv4Addr": "10.42.0.2",
  "snssai": {"sst": 2,"sd": "00002"},
  "timeStamp": "2025-03-27T18:03:49Z",
  "startTime": "2025-03-27T18:00:59Z",
  "userDataUsageMeasurements": [{
  "flowInfo": {
    "packFiltId": "{\"SrcIp\": \"10.42.0.2\", \"DstIp\": \"142.250.64.78\", \"SrcPort\": 40312, \"DstPort\": 443}",
    "fDir": "BIDIRECTIONAL"},
    "volumeMeasurement": {"totalVolume": 152300, "ulVolume": 12300, "dlVolume": 140000,
      "totalNbOfPackets": 130, "ulNbOfPackets": 30, "dlNbOfPackets": 100},
    "throughputMeasurement": {"ulThroughput": 72.35294117647059, "dlThroughput": 823.5294117647059},
    "throughputStatisticsMeasurement": {"ulAverage": 72.35294117647059, "ulPeak": 4100.0,
      "dlAverage": 823.5294117647059, "dlPeak": 46000.0}}],
  "subscriptionId": "ees-1"}"#;
