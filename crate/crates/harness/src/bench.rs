//! Ingest overhead of the EES aggregation hook.
//!
//! Each variant runs a paced load at the offered descriptor rate, then an
//! unpaced run to find its capacity. A second thread measures probe round
//! trips through the ingestion socket while the load runs.

use std::io::Write;
use std::net::{Ipv4Addr, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::Result;
use axum::routing::post;
use axum::Router;
use nwdaf_loop::ees::{EesSubscriptionRequest, EventType, FlowDirection, FlowKey, Granularity, MeasurementType, SnssaiId};
use nwdaf_loop::events::EventLog;
use nwdaf_loop::http;
use nwdaf_loop::upf::service::{read_frame, write_frame, UpfConfig};
use nwdaf_loop::upf::{PacketDescriptor, PacketDirection, PacketKind, PduSession, Upf, UpfOptions};
use serde::Serialize;

use crate::traffic::probe_packet;

/// Descriptor size that makes 1 Mbit/s equal 1000 descriptors/s.
pub const BENCH_PACKET_BYTES: u32 = 125;
pub const REPORT_PERIOD_S: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    BaselineNoEes,
    Ees0Sub,
    Ees1Sub,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::BaselineNoEes, Variant::Ees0Sub, Variant::Ees1Sub];

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineNoEes => "BASELINE_NO_EES",
            Variant::Ees0Sub => "EES_0_SUB",
            Variant::Ees1Sub => "EES_1_SUB",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchParams {
    pub rates_mbps: Vec<f64>,
    pub variants: Vec<Variant>,
    pub seconds: f64,
    pub saturation_seconds: f64,
    pub sessions: u32,
    pub flows_per_session: u16,
    pub probe_every: Duration,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            rates_mbps: vec![10.0, 50.0, 100.0],
            variants: Variant::ALL.to_vec(),
            seconds: 2.0,
            saturation_seconds: 1.0,
            sessions: 8,
            flows_per_session: 16,
            probe_every: Duration::from_millis(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: &'static str,
    pub rate_mbps: f64,
    pub offered_pps: f64,
    pub achieved_pps: f64,
    pub capacity_pps: f64,
    pub probe_median_us: f64,
    pub probe_p99_us: f64,
    pub probes: usize,
    pub reports: u64,
}

pub fn mbps_to_pps(rate_mbps: f64) -> f64 {
    rate_mbps * 1e6 / (8.0 * f64::from(BENCH_PACKET_BYTES))
}

fn ue(s: u32) -> Ipv4Addr {
    Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 60, 0, 1)) + s)
}

fn workload(p: &BenchParams) -> Vec<PacketDescriptor> {
    let mut out = Vec::new();
    for s in 0..p.sessions {
        for f in 0..p.flows_per_session {
            for dir in [PacketDirection::Uplink, PacketDirection::Downlink] {
                let mut flow = FlowKey {
                    src_ip: ue(s),
                    dst_ip: Ipv4Addr::new(198, 51, 100, (f % 250) as u8 + 1),
                    src_port: 20000 + f,
                    dst_port: 443,
                    direction: FlowDirection::Bidirectional,
                };
                if dir == PacketDirection::Downlink {
                    flow = flow.reversed();
                }
                out.push(PacketDescriptor {
                    flow,
                    pdu_session_id: s + 1,
                    ue_ipv4_addr: ue(s),
                    size_bytes: BENCH_PACKET_BYTES,
                    direction: dir,
                    kind: PacketKind::Data,
                    timestamp: 0,
                });
            }
        }
    }
    out
}

/// Drives `upf` for `seconds`; paced at `pps` when given, else flat out.
/// Returns the achieved descriptor rate.
fn drive(upf: &Upf, variant: Variant, packets: &[PacketDescriptor], pps: Option<f64>, seconds: f64) -> f64 {
    let start = Instant::now();
    let limit = Duration::from_secs_f64(seconds);
    let mut sent = 0u64;
    let mut i = 0usize;
    loop {
        let elapsed = start.elapsed();
        if elapsed >= limit {
            break;
        }
        let due = match pps {
            Some(r) => (elapsed.as_secs_f64() * r) as u64,
            None => sent + 1024,
        };
        if sent >= due {
            std::thread::sleep(Duration::from_micros(200));
            continue;
        }
        while sent < due {
            let p = &packets[i];
            i = (i + 1) % packets.len();
            match variant {
                Variant::BaselineNoEes => upf.ingest_packet_baseline(p),
                _ => upf.ingest_packet(p),
            };
            sent += 1;
        }
    }
    sent as f64 / start.elapsed().as_secs_f64()
}

/// Probe round trips through the ingestion socket until `stop` is set.
fn probe_rtts(addr: std::net::SocketAddr, every: Duration, stop: Arc<AtomicBool>) -> std::io::Result<Vec<f64>> {
    let mut conn = TcpStream::connect(addr)?;
    conn.set_nodelay(true)?;
    conn.set_read_timeout(Some(Duration::from_secs(1)))?;
    let mut rtts = Vec::new();
    let mut seq = 0;
    while !stop.load(Ordering::Relaxed) {
        seq += 1;
        let t = Instant::now();
        write_frame(&mut conn, &probe_packet(ue(0), 1, Ipv4Addr::new(10, 60, 0, 1), seq))?;
        conn.flush()?;
        loop {
            match read_frame(&mut conn)? {
                Some(p) if p.timestamp == seq => break,
                Some(_) => continue,
                None => return Ok(rtts),
            }
        }
        rtts.push(t.elapsed().as_secs_f64() * 1e6);
        std::thread::sleep(every);
    }
    Ok(rtts)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

async fn sink() -> Result<(http::ServerHandle, Arc<AtomicU64>)> {
    let count = Arc::new(AtomicU64::new(0));
    let c = count.clone();
    let router = Router::new().route(
        "/sink",
        post(move || {
            let c = c.clone();
            async move {
                c.fetch_add(1, Ordering::Relaxed);
                axum::http::StatusCode::NO_CONTENT
            }
        }),
    );
    let handle = http::serve(http::bind("127.0.0.1:0").await?, router).await?;
    Ok((handle, count))
}

async fn bench_variant(p: &BenchParams, variant: Variant, rate_mbps: f64) -> Result<BenchRow> {
    let upf = Arc::new(Upf::new(UpfOptions::default(), EventLog::new()));
    let sessions = (0..p.sessions).map(|s| PduSession::new(s + 1, ue(s), SnssaiId::new(1, None))).collect();
    let rt = nwdaf_loop::upf::service::start(upf.clone(), &UpfConfig { sessions, ..UpfConfig::default() }).await?;
    let (sink, reports) = sink().await?;
    if variant == Variant::Ees1Sub {
        let req = EesSubscriptionRequest::new(
            [EventType::UserDataUsageMeasures],
            [MeasurementType::VolumeMeasurement],
            Granularity::PerFlow,
            REPORT_PERIOD_S,
            format!("{}/sink", sink.base_uri()),
        );
        upf.handle_subscribe(req)?;
    }
    let packets = Arc::new(workload(p));
    let stop = Arc::new(AtomicBool::new(false));
    let prober = {
        let (stop, addr, every) = (stop.clone(), rt.ingest_addr, p.probe_every);
        std::thread::spawn(move || probe_rtts(addr, every, stop))
    };
    let pps = mbps_to_pps(rate_mbps);
    let (u, pk, seconds, sat) = (upf.clone(), packets.clone(), p.seconds, p.saturation_seconds);
    let (achieved, capacity) = tokio::task::spawn_blocking(move || {
        let achieved = drive(&u, variant, &pk, Some(pps), seconds);
        let capacity = if sat > 0.0 { drive(&u, variant, &pk, None, sat) } else { f64::NAN };
        (achieved, capacity)
    })
    .await?;
    stop.store(true, Ordering::Relaxed);
    let mut rtts = tokio::task::spawn_blocking(move || prober.join()).await?.map_err(|_| anyhow::anyhow!("probe thread panicked"))??;
    rtts.sort_by(f64::total_cmp);
    rt.shutdown().await;
    sink.shutdown().await;
    Ok(BenchRow {
        variant: variant.name(),
        rate_mbps,
        offered_pps: pps,
        achieved_pps: achieved,
        capacity_pps: capacity,
        probe_median_us: percentile(&rtts, 0.5),
        probe_p99_us: percentile(&rtts, 0.99),
        probes: rtts.len(),
        reports: reports.load(Ordering::Relaxed),
    })
}

/// One row per rate × variant, variants interleaved per rate so slow drift
/// of the host affects all of them alike.
pub async fn overhead_bench(p: &BenchParams) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &rate in &p.rates_mbps {
        for &v in &p.variants {
            rows.push(bench_variant(p, v, rate).await?);
        }
    }
    Ok(rows)
}

pub fn write_bench_csv(w: impl Write, rows: &[BenchRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
