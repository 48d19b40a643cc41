//! Synthetic labelled flow corpus.
//!
//! Each snapshot is an isolated address block containing a gateway that all
//! UEs probe once per second, a pool of servers and either one bot plus one
//! benign UE or three benign UEs. Traffic comes from the same generators the
//! live scenario uses, accumulated over a random observation window, so the
//! graph features match what the analytics engine sees at run time.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::time::Duration;

use nwdaf_loop::ees::FlowKey;
use nwdaf_loop::engine::FEATURE_SCHEMA;
use nwdaf_loop::mlprov::{train_forest, ForestModel, TrainError, TrainParams};
use nwdaf_loop::upf::PacketDirection;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csvio::{feature_rows, FeatureRow, FlowRecord};
use crate::traffic::{generate_traffic, Behavior, UeProfile};

pub const MIXED_SNAPSHOTS: usize = 50;
pub const BENIGN_SNAPSHOTS: usize = 50;
pub const SCAN_SERVERS: usize = 20;
pub const MODEL_NAME: &str = "bot-detector";

const PROBE_BYTES: u64 = 84;

#[derive(Default)]
struct Counts {
    ul_packets: u64,
    ul_bytes: u64,
    dl_packets: u64,
    dl_bytes: u64,
}

fn observe(profile: &UeProfile, targets: &[Ipv4Addr], lead: f64, window: f64, flows: &mut BTreeMap<FlowKey, Counts>) {
    let horizon = Duration::from_secs_f64((window - lead).max(0.0));
    for e in generate_traffic(profile, targets).take_while(|e| e.at < horizon) {
        let c = flows.entry(e.packet.flow.normalized_for(profile.ue_ipv4_addr)).or_default();
        let size = u64::from(e.packet.size_bytes);
        match e.packet.direction {
            PacketDirection::Uplink => {
                c.ul_packets += 1;
                c.ul_bytes += size;
            }
            PacketDirection::Downlink => {
                c.dl_packets += 1;
                c.dl_bytes += size;
            }
        }
    }
}

fn emit(ue: Ipv4Addr, gateway: Ipv4Addr, window: f64, phase: f64, label: &str, flows: BTreeMap<FlowKey, Counts>, out: &mut Vec<FlowRecord>) {
    // Probes are uplink only: the echo never passes the UPF data path.
    let probes = (window - phase).max(0.0).ceil() as u64;
    if probes > 0 {
        out.push(FlowRecord {
            src_ip: ue,
            dst_ip: gateway,
            src_port: 0,
            dst_port: 0,
            packets: probes,
            bytes: probes * PROBE_BYTES,
            label: label.into(),
        });
    }
    for (k, c) in flows {
        if c.ul_packets > 0 {
            out.push(FlowRecord {
                src_ip: k.src_ip,
                dst_ip: k.dst_ip,
                src_port: k.src_port,
                dst_port: k.dst_port,
                packets: c.ul_packets,
                bytes: c.ul_bytes,
                label: label.into(),
            });
        }
        if c.dl_packets > 0 {
            out.push(FlowRecord {
                src_ip: k.dst_ip,
                dst_ip: k.src_ip,
                src_port: k.dst_port,
                dst_port: k.src_port,
                packets: c.dl_packets,
                bytes: c.dl_bytes,
                label: "Background".into(),
            });
        }
    }
}

fn benign_behavior(rng: &mut ChaCha8Rng) -> Behavior {
    match rng.gen_range(0..3) {
        0 => Behavior::BenignIperf { rate_mbps: rng.gen_range(0.5..12.0), packet_bytes: crate::traffic::IPERF_PACKET_BYTES },
        1 => Behavior::BenignWeb { servers: rng.gen_range(1..=3), mean_gap_ms: rng.gen_range(300..1500) },
        _ => Behavior::Idle,
    }
}

/// Flow records of the whole corpus: 50 bot and 200 benign UEs.
pub fn generate_corpus(seed: u64) -> Vec<FlowRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in 0..MIXED_SNAPSHOTS + BENIGN_SNAPSHOTS {
        let block = s as u8;
        let gateway = Ipv4Addr::new(10, 100, block, 1);
        let ue = |i: u8| Ipv4Addr::new(10, 100, block, 2 + i);
        let scan_pool: Vec<Ipv4Addr> = (1..=SCAN_SERVERS as u8).map(|i| Ipv4Addr::new(172, 16, block, i)).collect();
        let mut benign_pool: Vec<Ipv4Addr> = (1..=3).map(|i| Ipv4Addr::new(172, 17, block, i)).collect();

        let (mut members, window) = if s < MIXED_SNAPSHOTS {
            let k = rng.gen_range(3..=SCAN_SERVERS);
            let lead = rng.gen_range(0.0..20.0);
            // Short scans teach the model what a first partial report looks like.
            let scan = rng.gen_range(0.4..30.0);
            let mut targets = scan_pool.clone();
            targets.shuffle(&mut rng);
            targets.truncate(k);
            let bot = UeProfile { ue_ipv4_addr: ue(0), pdu_session_id: 1, behavior: Behavior::BotScan { gap_ms: 200 }, seed: rng.gen() };
            (vec![(bot, targets, lead, "botnet")], lead + scan)
        } else {
            (Vec::new(), rng.gen_range(1.0..50.0))
        };
        let benign = if s < MIXED_SNAPSHOTS { 1 } else { 3 };
        for _ in 0..benign {
            let idx = members.len() as u8;
            benign_pool.shuffle(&mut rng);
            let p = UeProfile { ue_ipv4_addr: ue(idx), pdu_session_id: u32::from(idx) + 1, behavior: benign_behavior(&mut rng), seed: rng.gen() };
            members.push((p, benign_pool.clone(), 0.0, "normal"));
        }
        for (p, targets, lead, label) in members {
            let mut flows = BTreeMap::new();
            observe(&p, &targets, lead, window, &mut flows);
            let phase = rng.gen_range(0.0..1.0);
            emit(p.ue_ipv4_addr, gateway, window, phase, label, flows, &mut out);
        }
    }
    out
}

/// Stratified split: `test_fraction` of each class goes to the holdout.
pub fn stratified_split<T: Clone>(rows: &[(T, u8)], test_fraction: f64, seed: u64) -> (Vec<(T, u8)>, Vec<(T, u8)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.1 == class).map(|(i, _)| i).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        for (j, i) in idx.into_iter().enumerate() {
            if j < n_test {
                test.push(rows[i].clone());
            } else {
                train.push(rows[i].clone());
            }
        }
    }
    (train, test)
}

/// Labelled UE feature rows of the corpus.
pub fn corpus_features(seed: u64) -> Vec<FeatureRow> {
    feature_rows(&generate_corpus(seed)).into_iter().filter(|r| r.label.is_some()).collect()
}

/// Forest trained on the full corpus; what the scenarios provision by default.
pub fn reference_model(seed: u64, params: &TrainParams) -> Result<ForestModel, TrainError> {
    let rows: Vec<(Vec<f64>, u8)> =
        corpus_features(seed).into_iter().map(|r| (r.features.to_vector().to_vec(), r.label.unwrap_or_default())).collect();
    Ok(train_forest(MODEL_NAME, &FEATURE_SCHEMA, &rows, params)?.model)
}
