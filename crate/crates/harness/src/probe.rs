//! Ping-like reachability probes sent through the UPF ingestion socket.

use std::net::{Ipv4Addr, SocketAddr};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use nwdaf_loop::ees::{format_timestamp, Timestamp};
use nwdaf_loop::events::EventLog;
use nwdaf_loop::upf::service::{decode_frame_body, encode_frame, MAX_FRAME};
use parking_lot::Mutex;
use serde_json::json;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio::time::{Instant, MissedTickBehavior};

use crate::traffic::probe_packet;

pub const PROBE_INTERVAL: Duration = Duration::from_secs(1);
pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub ue: Ipv4Addr,
    pub seq: u64,
    pub sent_at: Timestamp,
    pub success: bool,
    pub rtt: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct ProbeTarget {
    pub ue: Ipv4Addr,
    pub pdu_session_id: u32,
    pub gateway: Ipv4Addr,
    pub ingest: SocketAddr,
    pub timeout: Duration,
}

/// First failure that follows at least one success.
pub fn first_failure_after_success(records: &[ProbeRecord]) -> Option<&ProbeRecord> {
    let first_ok = records.iter().position(|r| r.success)?;
    records[first_ok..].iter().find(|r| !r.success)
}

async fn read_echo(conn: &mut TcpStream) -> std::io::Result<u64> {
    let mut len = [0u8; 4];
    conn.read_exact(&mut len).await?;
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; n];
    conn.read_exact(&mut body).await?;
    decode_frame_body(&body)
        .map(|p| p.timestamp)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
}

/// Sends one probe per second until `stop` flips, recording a
/// `probe_result` event per probe. A probe succeeds iff its echo arrives
/// within the timeout; late echoes are discarded.
pub async fn probe_loop(
    target: ProbeTarget,
    events: EventLog,
    records: Arc<Mutex<Vec<ProbeRecord>>>,
    mut stop: watch::Receiver<bool>,
) -> std::io::Result<()> {
    let mut conn = TcpStream::connect(target.ingest).await?;
    conn.set_nodelay(true)?;
    let mut tick = tokio::time::interval(PROBE_INTERVAL);
    tick.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut seq = 0u64;
    loop {
        tokio::select! {
            _ = tick.tick() => {}
            _ = stop.changed() => return Ok(()),
        }
        if *stop.borrow() {
            return Ok(());
        }
        seq += 1;
        let sent_at = Utc::now();
        let started = Instant::now();
        let deadline = started + target.timeout;
        conn.write_all(&encode_frame(&probe_packet(target.ue, target.pdu_session_id, target.gateway, seq)))
            .await?;
        let mut rtt = None;
        loop {
            match tokio::time::timeout_at(deadline, read_echo(&mut conn)).await {
                Ok(Ok(s)) if s == seq => {
                    rtt = Some(started.elapsed());
                    break;
                }
                Ok(Ok(_)) => continue,
                Ok(Err(e)) => return Err(e),
                Err(_) => break,
            }
        }
        let rec = ProbeRecord { ue: target.ue, seq, sent_at, success: rtt.is_some(), rtt };
        events.record(
            "harness",
            "probe_result",
            json!({
                "ue": rec.ue,
                "seq": seq,
                "sentAt": format_timestamp(&sent_at),
                "success": rec.success,
                "timeoutMs": target.timeout.as_secs_f64() * 1e3,
                "rttMs": rtt.map(|d| d.as_secs_f64() * 1e3),
            }),
        );
        records.lock().push(rec);
    }
}
