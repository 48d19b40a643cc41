mod support;

use std::collections::BTreeSet;
use std::io::Write;
use std::net::Ipv4Addr;
use std::sync::Arc;

use chrono::Utc;
use nwdaf_loop::ees::{
    AnalyticsEventId, AnalyticsSubscription, EesNotification, EventType, ExceptionId, FlowDirection, FlowInfo,
    FlowKey, SnssaiId, Timestamp, Token, UsageMeasurementItem, VolumeMeasurement,
};
use nwdaf_loop::engine::{BotEngine, DetectionResult, Label, ModelBinding, FEATURE_SCHEMA};
use nwdaf_loop::events::EventLog;
use nwdaf_loop::http::{self, ServerHandle};
use nwdaf_loop::mlprov::service::router;
use nwdaf_loop::mlprov::{DecisionTree, ForestModel, ModelDescriptor, Registry, TreeNode};
use nwdaf_loop::nwdaf::{wrap_results, AppendOutcome, Nwdaf, ReportStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::messages as gen;

fn ue(i: u8) -> Ipv4Addr {
    Ipv4Addr::new(10, 42, 0, 2 + i)
}

fn peer(i: u8) -> Ipv4Addr {
    Ipv4Addr::new(198, 18, 0, 1 + i)
}

/// A report in which `ue` exchanged traffic with each of `servers`.
fn report(ue: Ipv4Addr, at: Timestamp, servers: &[Ipv4Addr], sub: &str) -> EesNotification {
    EesNotification {
        event_type: EventType::UserDataUsageMeasures,
        ue_ipv4_addr: ue,
        snssai: SnssaiId::new(1, None),
        time_stamp: at,
        start_time: at - chrono::Duration::seconds(1),
        user_data_usage_measurements: servers
            .iter()
            .map(|&dst| UsageMeasurementItem {
                flow_info: Some(FlowInfo::for_flow(&FlowKey {
                    src_ip: ue,
                    dst_ip: dst,
                    src_port: 40000,
                    dst_port: 80,
                    direction: FlowDirection::Bidirectional,
                })),
                volume_measurement: Some(VolumeMeasurement::from_counters(600, 900, 6, 9)),
                ..Default::default()
            })
            .collect(),
        subscription_id: sub.into(),
    }
}

fn result(i: u8, anomalous: bool, excep: ExceptionId) -> DetectionResult {
    let now = Utc::now();
    DetectionResult {
        ue_ipv4_addr: ue(i),
        label: if anomalous { Label::Anomalous } else { Label::Benign },
        confidence: if anomalous { 0.9 } else { 0.1 },
        excep_id: excep,
        window_start: now,
        window_end: now,
    }
}

fn analytics_sub(period: u32, ids: Option<BTreeSet<ExceptionId>>) -> AnalyticsSubscription {
    AnalyticsSubscription {
        subscription_id: String::new(),
        event_id: AnalyticsEventId::AbnormalBehaviour,
        exception_ids: ids,
        notify_uri: "http://127.0.0.1:9/notify".into(),
        period_seconds: period,
    }
}

proptest! {
    #[test]
    fn exceptions_respect_the_subscription_filter(
        rows in prop::collection::vec((any::<bool>(), 0usize..4), 0..12),
        filter in prop::option::of(prop::collection::btree_set(0usize..4, 0..4)),
    ) {
        let results: Vec<DetectionResult> = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, e))| result(i as u8, a, ExceptionId::ALL[e]))
            .collect();
        let ids = filter.map(|f| f.into_iter().map(|e| ExceptionId::ALL[e]).collect::<BTreeSet<_>>());
        let sub = analytics_sub(3, ids.clone());
        let n = wrap_results("s", Some(&sub), &results, Utc::now());
        let expected: Vec<Ipv4Addr> = results
            .iter()
            .filter(|r| r.label == Label::Anomalous && ids.as_ref().is_none_or(|f| f.contains(&r.excep_id)))
            .map(|r| r.ue_ipv4_addr)
            .collect();
        let got: Vec<Ipv4Addr> = n.exceptions.iter().flat_map(|e| e.ue_ipv4_addrs.clone()).collect();
        prop_assert_eq!(got, expected);
        for e in &n.exceptions {
            prop_assert!(ids.as_ref().is_none_or(|f| f.contains(&e.excep_id)));
        }
    }

    #[test]
    fn store_query_matches_a_linear_scan(seed in any::<u64>(), lo in 0usize..40, span in 0usize..40, pick in prop::option::of(0u8..3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Utc::now();
        let mut store = ReportStore::in_memory();
        let mut kept = Vec::new();
        for k in 0..40 {
            let at = base + chrono::Duration::seconds(rng.gen_range(0..40));
            let n = report(ue(rng.gen_range(0..3)), at, &[peer(0)], &format!("s{k}"));
            store.append(n.clone(), "upf", base).unwrap();
            kept.push(n);
        }
        let (start, end) = (base + chrono::Duration::seconds(lo as i64), base + chrono::Duration::seconds((lo + span) as i64));
        let mut expected: Vec<&EesNotification> = kept
            .iter()
            .filter(|n| n.time_stamp >= start && n.time_stamp <= end && pick.is_none_or(|p| n.ue_ipv4_addr == ue(p)))
            .collect();
        expected.sort_by_key(|n| n.time_stamp);
        let got = store.query(start, end, pick.map(ue));
        prop_assert_eq!(got.iter().map(|r| &r.notification).collect::<Vec<_>>(), expected);
    }
}

#[test]
fn store_is_append_only_and_reloads_after_a_torn_write() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("reports.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let written: Vec<EesNotification> = (0..50).map(|_| gen::notification(&mut rng)).collect();
    {
        let (mut store, stats) = ReportStore::open(&path).unwrap();
        assert_eq!(stats.loaded, 0);
        for n in &written {
            assert_eq!(store.append(n.clone(), "upf-a", Utc::now()).unwrap().0, AppendOutcome::Stored);
        }
        // Same (subscription, timestamp, UE) is acknowledged but not stored twice.
        assert_eq!(store.append(written[0].clone(), "upf-a", Utc::now()).unwrap().0, AppendOutcome::Duplicate);
        assert_eq!(store.len(), 50);
    }
    let before = std::fs::read(&path).unwrap();
    std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"receivedAt\":\"20").unwrap();

    let (store, stats) = ReportStore::open(&path).unwrap();
    assert_eq!((stats.loaded, stats.skipped, stats.truncated_bytes), (50, 0, 17));
    assert_eq!(std::fs::read(&path).unwrap(), before);
    let mut all: Vec<EesNotification> = store
        .query(Timestamp::MIN_UTC, Timestamp::MAX_UTC, None)
        .into_iter()
        .map(|r| r.notification)
        .collect();
    let mut expected = written.clone();
    let key = |n: &EesNotification| (n.time_stamp, n.subscription_id.clone(), n.ue_ipv4_addr);
    all.sort_by_key(key);
    expected.sort_by_key(key);
    assert_eq!(all, expected);
}

/// Model provisioning server with a one-stump forest: anomalous iff the
/// UE contacted more than four distinct peers.
async fn scan_detector() -> (ServerHandle, ModelBinding, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let reg = Arc::new(Registry::open(dir.path()).unwrap());
    let server = http::serve(http::bind("127.0.0.1:0").await.unwrap(), router(reg.clone())).await.unwrap();
    reg.set_public_base(server.base_uri());
    let model = ForestModel {
        descriptor: ModelDescriptor {
            name: "scan".into(),
            version: None,
            event_id: AnalyticsEventId::AbnormalBehaviour,
            feature_schema: FEATURE_SCHEMA.iter().map(|s| s.to_string()).collect(),
            created_at: None,
            metrics: None,
        },
        num_classes: 2,
        trees: vec![DecisionTree {
            nodes: vec![
                TreeNode::Split { feature_index: 1, threshold: 4.5, left_child: 1, right_child: 2 },
                TreeNode::Leaf { class_label: 0 },
                TreeNode::Leaf { class_label: 1 },
            ],
        }],
    };
    let (d, _) = reg.register(model).unwrap();
    let version = d.version.unwrap();
    let binding = ModelBinding { name: "scan".into(), version, inference_uri: reg.inference_uri("scan", version) };
    (server, binding, dir)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn northbound_fires_once_per_period_with_only_flagged_ues() {
    let (server, binding, _dir) = scan_detector().await;
    let nwdaf = Nwdaf::new(ReportStore::in_memory(), BotEngine::new(0.5), EventLog::new());
    let t0 = Utc::now();

    // No model yet: the tick is consumed without a notification.
    let early = nwdaf.handle_analytics_subscribe(analytics_sub(1, None), t0 - chrono::Duration::seconds(5)).unwrap();
    assert!(nwdaf.nbi_dispatch_tick(t0).await.is_empty());
    assert_eq!(nwdaf.engine_errors(), 1);
    nwdaf.handle_analytics_unsubscribe(&early).unwrap();
    nwdaf.engine().bind_model(binding);

    let scanner: Vec<Ipv4Addr> = (0..10).map(peer).collect();
    nwdaf.handle_upf_notification(report(ue(0), t0, &scanner, "u")).unwrap();
    nwdaf.handle_upf_notification(report(ue(1), t0, &[peer(0)], "u")).unwrap();

    let ddos_only = BTreeSet::from([ExceptionId::SuspicionOfDdosAttack]);
    let other_only = BTreeSet::from([ExceptionId::UnexpectedUeLocation]);
    let every3 = nwdaf.handle_analytics_subscribe(analytics_sub(3, Some(ddos_only)), t0).unwrap();
    let filtered = nwdaf.handle_analytics_subscribe(analytics_sub(3, Some(other_only)), t0).unwrap();
    assert!(nwdaf.handle_analytics_subscribe(analytics_sub(0, None), t0).is_err());

    let mut fired = Vec::new();
    for k in 0..=20 {
        let now = t0 + chrono::Duration::milliseconds(500 * k);
        for d in nwdaf.nbi_dispatch_tick(now).await {
            fired.push((k, d));
        }
    }
    let ticks: Vec<i64> = fired.iter().filter(|(_, d)| d.notification.subscription_id == every3).map(|(k, _)| *k).collect();
    assert_eq!(ticks, vec![6, 12, 18]);
    for (_, d) in &fired {
        let flagged: Vec<Ipv4Addr> = d.notification.exceptions.iter().flat_map(|e| e.ue_ipv4_addrs.clone()).collect();
        if d.notification.subscription_id == filtered {
            assert!(flagged.is_empty());
        } else {
            assert_eq!(flagged, vec![ue(0)]);
        }
    }

    // A failed delivery is retried on the very next tick, before the next period.
    let (_, last) = fired.last().unwrap().clone();
    nwdaf.delivery_failed(last.clone());
    let retry = nwdaf.nbi_dispatch_tick(t0 + chrono::Duration::milliseconds(10_100)).await;
    assert_eq!(retry, vec![last]);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn analysis_reports_the_model_version_used() {
    let (server, binding, _dir) = scan_detector().await;
    let nwdaf = Nwdaf::new(ReportStore::in_memory(), BotEngine::new(0.5), EventLog::new());
    nwdaf.engine().bind_model(binding.clone());
    let now = Utc::now();
    nwdaf.handle_upf_notification(report(ue(2), now, &[peer(1), peer(2)], "x")).unwrap();
    let a = nwdaf.analyze(now + chrono::Duration::seconds(1)).await.unwrap();
    assert_eq!(a.model.unwrap().version, binding.version);
    assert_eq!(a.results.len(), 1);
    assert_eq!(a.results[0].label, Label::Benign);
    server.shutdown().await;
}
