mod support;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use chrono::{TimeZone, Utc};
use nwdaf_loop::ees::{EesNotification, EventType, FlowDirection, FlowInfo, FlowKey, SnssaiId, UsageMeasurementItem, VolumeMeasurement};
use nwdaf_loop::engine::{build_comm_graph, extract_features, node_degrees, weighted_betweenness, CommGraph};
use nwdaf_loop::nwdaf::StoredUsageReport;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::betweenness::{addr, oracle, SmallGraph};

fn assert_matches_oracle(g: &SmallGraph) {
    let expected = oracle(g);
    let got = weighted_betweenness(&g.to_comm_graph());
    assert_eq!(got.len(), g.n);
    for (i, want) in expected.iter().enumerate() {
        let have = got[&addr(i)];
        assert!((have - want).abs() <= 1e-9, "node {i}: brandes {have} vs oracle {want} on {g:?}");
    }
}

#[test]
fn brandes_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        assert_matches_oracle(&SmallGraph::random(&mut rng, 8));
    }
}

#[test]
fn oracle_agrees_on_hand_counted_diamond() {
    // 0 -> {1, 2} -> 3 with equal lengths: 1 and 2 each carry half of 0→3.
    let g = SmallGraph { n: 4, edges: vec![(0, 1, 2), (0, 2, 2), (1, 3, 2), (2, 3, 2)] };
    assert_eq!(oracle(&g), vec![0.0, 0.5, 0.5, 0.0]);
    assert_matches_oracle(&g);
}

#[test]
fn heavier_link_is_the_shorter_path() {
    // 0→1→2 with weights 12 and 12 has length 1/6; the direct edge 0→2 with weight 1 has length 1.
    let g = SmallGraph { n: 3, edges: vec![(0, 1, 12), (1, 2, 12), (0, 2, 1)] };
    assert_eq!(oracle(&g), vec![0.0, 1.0, 0.0]);
    assert_matches_oracle(&g);
}

fn scaled(g: &SmallGraph, k: u64) -> CommGraph {
    let mut out = CommGraph::new();
    for i in 0..g.n {
        out.add_node(addr(i));
    }
    for &(s, t, w) in &g.edges {
        out.add_edge(addr(s), addr(t), w * k);
    }
    out
}

fn relabelled(g: &SmallGraph, perm: &[usize]) -> CommGraph {
    let mut out = CommGraph::new();
    for i in 0..g.n {
        out.add_node(addr(perm[i]));
    }
    for &(s, t, w) in &g.edges {
        out.add_edge(addr(perm[s]), addr(perm[t]), w);
    }
    out
}

fn report(ue: Ipv4Addr, second: i64, flows: &[(Ipv4Addr, u16, u64, u64)]) -> StoredUsageReport {
    let t = Utc.with_ymd_and_hms(2025, 3, 27, 18, 0, 0).unwrap() + chrono::Duration::seconds(second);
    let items = flows
        .iter()
        .map(|&(dst, port, ul, dl)| UsageMeasurementItem {
            flow_info: Some(FlowInfo::for_flow(&FlowKey {
                src_ip: ue,
                dst_ip: dst,
                src_port: port,
                dst_port: 80,
                direction: FlowDirection::Bidirectional,
            })),
            volume_measurement: Some(VolumeMeasurement::from_counters(ul * 100, dl * 100, ul, dl)),
            ..Default::default()
        })
        .collect();
    StoredUsageReport {
        received_at: t,
        notification: EesNotification {
            event_type: EventType::UserDataUsageMeasures,
            ue_ipv4_addr: ue,
            snssai: SnssaiId::new(1, None),
            time_stamp: t,
            start_time: t - chrono::Duration::seconds(1),
            user_data_usage_measurements: items,
            subscription_id: "s".into(),
        },
        source_upf: "upf".into(),
    }
}

fn arb_graph() -> impl Strategy<Value = SmallGraph> {
    any::<u64>().prop_map(|seed| SmallGraph::random(&mut ChaCha8Rng::seed_from_u64(seed), 8))
}

fn arb_reports() -> impl Strategy<Value = Vec<StoredUsageReport>> {
    let flow = (0u8..6, 1000u16..1004, 0u64..20, 0u64..20);
    prop::collection::vec((0u8..3, 0i64..10, prop::collection::vec(flow, 0..5)), 0..12).prop_map(|rs| {
        rs.into_iter()
            .map(|(ue, sec, flows)| {
                let ue = Ipv4Addr::new(10, 42, 0, ue + 2);
                let flows: Vec<_> =
                    flows.into_iter().map(|(d, p, ul, dl)| (Ipv4Addr::new(198, 18, 0, d + 1), p, ul, dl)).collect();
                report(ue, sec, &flows)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn scaling_weights_scales_weighted_degrees_only(g in arb_graph(), k in 1u64..50) {
        let base = g.to_comm_graph();
        let big = scaled(&g, k);
        for i in 0..g.n {
            let (a, b) = (node_degrees(&base, addr(i)).unwrap(), node_degrees(&big, addr(i)).unwrap());
            prop_assert_eq!((a.in_degree, a.out_degree), (b.in_degree, b.out_degree));
            prop_assert_eq!((a.weighted_in * k, a.weighted_out * k), (b.weighted_in, b.weighted_out));
        }
        let (x, y) = (weighted_betweenness(&base), weighted_betweenness(&big));
        for (node, v) in &x {
            prop_assert!((v - y[node]).abs() <= 1e-9, "{} {} vs {}", node, v, y[node]);
        }
    }

    #[test]
    fn relabelling_nodes_permutes_betweenness(g in arb_graph(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..g.n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let before = weighted_betweenness(&g.to_comm_graph());
        let after = weighted_betweenness(&relabelled(&g, &perm));
        for i in 0..g.n {
            prop_assert!((before[&addr(i)] - after[&addr(perm[i])]).abs() <= 1e-9);
        }
    }

    #[test]
    fn degree_sums_balance(g in arb_graph()) {
        let feats = extract_features(&g.to_comm_graph());
        let sum = |f: &dyn Fn(&nwdaf_loop::engine::NodeFeatures) -> u64| feats.values().map(f).sum::<u64>();
        prop_assert_eq!(sum(&|f| f.in_degree), sum(&|f| f.out_degree));
        prop_assert_eq!(sum(&|f| f.in_degree), g.edges.len() as u64);
        prop_assert_eq!(sum(&|f| f.weighted_in_degree), sum(&|f| f.weighted_out_degree));
        prop_assert_eq!(sum(&|f| f.weighted_in_degree), g.edges.iter().map(|e| e.2).sum::<u64>());
    }

    #[test]
    fn betweenness_is_bounded_by_pair_count(g in arb_graph()) {
        let n = g.n as f64;
        let bound = (n - 1.0) * (n - 2.0);
        for v in weighted_betweenness(&g.to_comm_graph()).values() {
            prop_assert!(*v >= 0.0 && *v <= bound.max(0.0) + 1e-9);
        }
    }

    #[test]
    fn graph_ignores_report_order(reports in arb_reports(), seed in any::<u64>()) {
        let mut shuffled = reports.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(build_comm_graph(&reports), build_comm_graph(&shuffled));
    }

    #[test]
    fn features_are_a_pure_function_of_the_graph(reports in arb_reports()) {
        let g = build_comm_graph(&reports).graph;
        let a: BTreeMap<_, _> = extract_features(&g);
        let b = extract_features(&g.clone());
        prop_assert_eq!(a, b);
    }
}
