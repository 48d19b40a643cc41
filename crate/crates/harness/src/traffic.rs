//! Seeded per-UE packet streams and the wall-clock driver that replays them
//! into the UPF ingestion socket.

use std::net::{Ipv4Addr, SocketAddr};
use std::time::Duration;

use nwdaf_loop::ees::{FlowDirection, FlowKey};
use nwdaf_loop::upf::service::encode_frame;
use nwdaf_loop::upf::{PacketDescriptor, PacketDirection, PacketKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio::time::Instant;

pub const IPERF_PACKET_BYTES: u32 = 1250;
pub const ACK_BYTES: u32 = 64;
pub const SCAN_PACKET_BYTES: u32 = 60;
pub const SCAN_REPLY_BYTES: u32 = 120;
pub const SCAN_PORT: u16 = 3128;
pub const WEB_REQUEST_BYTES: u32 = 400;
pub const WEB_RESPONSE_BYTES: u32 = 1400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Behavior {
    /// Fixed-rate bulk upload to one server with an ACK every second packet.
    BenignIperf {
        rate_mbps: f64,
        #[serde(default = "iperf_bytes")]
        packet_bytes: u32,
    },
    /// Small page loads from up to three servers.
    BenignWeb {
        #[serde(default = "web_servers")]
        servers: usize,
        #[serde(default = "web_gap")]
        mean_gap_ms: u64,
    },
    /// One small exchange per server in turn, cycling.
    BotScan {
        #[serde(default = "scan_gap")]
        gap_ms: u64,
    },
    /// No data traffic; probes only.
    Idle,
}

fn iperf_bytes() -> u32 {
    IPERF_PACKET_BYTES
}

fn web_servers() -> usize {
    3
}

fn web_gap() -> u64 {
    700
}

fn scan_gap() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeProfile {
    pub ue_ipv4_addr: Ipv4Addr,
    pub pdu_session_id: u32,
    #[serde(flatten)]
    pub behavior: Behavior,
    #[serde(default)]
    pub seed: u64,
}

impl UeProfile {
    pub fn is_bot(&self) -> bool {
        matches!(self.behavior, Behavior::BotScan { .. })
    }

    pub fn validate(&self, targets: usize) -> Result<(), String> {
        match self.behavior {
            Behavior::BenignIperf { rate_mbps, packet_bytes } if !(rate_mbps > 0.0) || packet_bytes == 0 => {
                Err(format!("{}: iperf rate and packet size must be positive", self.ue_ipv4_addr))
            }
            Behavior::BenignWeb { servers, mean_gap_ms } if servers == 0 || servers > 3 || mean_gap_ms == 0 => {
                Err(format!("{}: web profile needs 1..=3 servers and a positive gap", self.ue_ipv4_addr))
            }
            Behavior::BotScan { gap_ms } if gap_ms == 0 || targets < 2 => {
                Err(format!("{}: scan needs a positive gap and at least two servers", self.ue_ipv4_addr))
            }
            _ => Ok(()),
        }
    }
}

/// A packet and its send offset from the start of the stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub at: Duration,
    pub packet: PacketDescriptor,
}

fn uplink(ue: &UeProfile, server: Ipv4Addr, sport: u16, dport: u16, size: u32, at: Duration) -> Emission {
    Emission {
        at,
        packet: PacketDescriptor {
            flow: FlowKey {
                src_ip: ue.ue_ipv4_addr,
                dst_ip: server,
                src_port: sport,
                dst_port: dport,
                direction: FlowDirection::Bidirectional,
            },
            pdu_session_id: ue.pdu_session_id,
            ue_ipv4_addr: ue.ue_ipv4_addr,
            size_bytes: size,
            direction: PacketDirection::Uplink,
            kind: PacketKind::Data,
            timestamp: at.as_nanos() as u64,
        },
    }
}

fn downlink(ue: &UeProfile, server: Ipv4Addr, sport: u16, dport: u16, size: u32, at: Duration) -> Emission {
    let mut e = uplink(ue, server, sport, dport, size, at);
    e.packet.flow = e.packet.flow.reversed();
    e.packet.direction = PacketDirection::Downlink;
    e
}

/// Infinite, time-ordered packet stream of one UE. `targets` lists the
/// servers the profile may talk to; iperf uses the first, web the first
/// `servers`, a scan all of them.
pub struct TrafficStream {
    profile: UeProfile,
    targets: Vec<Ipv4Addr>,
    rng: ChaCha8Rng,
    step: u64,
    queue: std::collections::VecDeque<Emission>,
    next_at: Duration,
    sport: u16,
}

pub fn generate_traffic(profile: &UeProfile, targets: &[Ipv4Addr]) -> TrafficStream {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed ^ u64::from(u32::from(profile.ue_ipv4_addr)));
    let sport = rng.gen_range(40000..50000);
    let next_at = match profile.behavior {
        Behavior::BenignWeb { mean_gap_ms, .. } => Duration::from_millis(rng.gen_range(0..mean_gap_ms)),
        _ => Duration::ZERO,
    };
    TrafficStream { profile: profile.clone(), targets: targets.to_vec(), rng, step: 0, queue: Default::default(), next_at, sport }
}

impl TrafficStream {
    fn refill(&mut self) -> bool {
        let p = &self.profile;
        match p.behavior {
            Behavior::Idle => return false,
            Behavior::BenignIperf { rate_mbps, packet_bytes } => {
                let Some(&server) = self.targets.first() else { return false };
                let interval = f64::from(packet_bytes) * 8.0 / (rate_mbps * 1e6);
                let at = Duration::from_secs_f64(self.step as f64 * interval);
                self.queue.push_back(uplink(p, server, self.sport, 5201, packet_bytes, at));
                if self.step % 2 == 1 {
                    self.queue.push_back(downlink(p, server, self.sport, 5201, ACK_BYTES, at));
                }
            }
            Behavior::BenignWeb { servers, mean_gap_ms } => {
                let pool = servers.min(self.targets.len());
                if pool == 0 {
                    return false;
                }
                let server = self.targets[self.rng.gen_range(0..pool)];
                let sport = 49152 + (self.step % 16000) as u16;
                let at = self.next_at;
                self.queue.push_back(uplink(p, server, sport, 443, WEB_REQUEST_BYTES, at));
                let replies = self.rng.gen_range(3..=10);
                for k in 1..=replies {
                    self.queue.push_back(downlink(p, server, sport, 443, WEB_RESPONSE_BYTES, at + Duration::from_millis(5 * k)));
                }
                let gap = mean_gap_ms as f64 * self.rng.gen_range(0.5..1.5);
                self.next_at = at + Duration::from_secs_f64(gap / 1e3);
            }
            Behavior::BotScan { gap_ms } => {
                let n = self.targets.len();
                if n == 0 {
                    return false;
                }
                let idx = (self.step % n as u64) as usize;
                let server = self.targets[idx];
                let sport = 33000 + idx as u16;
                let at = Duration::from_millis(self.step * gap_ms);
                let us = Duration::from_micros;
                self.queue.push_back(uplink(p, server, sport, SCAN_PORT, SCAN_PACKET_BYTES, at));
                self.queue.push_back(downlink(p, server, sport, SCAN_PORT, SCAN_PACKET_BYTES, at + us(500)));
                self.queue.push_back(uplink(p, server, sport, SCAN_PORT, SCAN_PACKET_BYTES, at + us(1000)));
                self.queue.push_back(downlink(p, server, sport, SCAN_PORT, SCAN_REPLY_BYTES, at + us(1500)));
                self.queue.push_back(uplink(p, server, sport, SCAN_PORT, SCAN_PACKET_BYTES, at + us(2000)));
            }
        }
        self.step += 1;
        true
    }
}

impl Iterator for TrafficStream {
    type Item = Emission;

    fn next(&mut self) -> Option<Emission> {
        if self.queue.is_empty() && !self.refill() {
            return None;
        }
        self.queue.pop_front()
    }
}

/// Echo-request descriptor from `ue` to `gateway`; `seq` is carried in the
/// timestamp field so echoes can be matched.
pub fn probe_packet(ue: Ipv4Addr, pdu_session_id: u32, gateway: Ipv4Addr, seq: u64) -> PacketDescriptor {
    PacketDescriptor {
        flow: FlowKey { src_ip: ue, dst_ip: gateway, src_port: 0, dst_port: 0, direction: FlowDirection::Bidirectional },
        pdu_session_id,
        ue_ipv4_addr: ue,
        size_bytes: 84,
        direction: PacketDirection::Uplink,
        kind: PacketKind::Probe,
        timestamp: seq,
    }
}

/// Replays `stream` in real time over one ingestion connection until `stop`
/// flips. Returns the number of descriptors sent.
pub async fn drive_traffic(
    stream: impl Iterator<Item = Emission>,
    ingest: SocketAddr,
    mut stop: watch::Receiver<bool>,
) -> std::io::Result<u64> {
    let mut conn = TcpStream::connect(ingest).await?;
    conn.set_nodelay(true)?;
    let start = Instant::now();
    let mut sent = 0u64;
    let mut buf = Vec::new();
    let mut stream = stream.peekable();
    while let Some(first) = stream.peek().copied() {
        if *stop.borrow() {
            break;
        }
        let due = start + first.at;
        if due > Instant::now() {
            tokio::select! {
                _ = tokio::time::sleep_until(due) => {}
                _ = stop.changed() => break,
            }
        }
        let now = Instant::now();
        buf.clear();
        while let Some(e) = stream.next_if(|e| start + e.at <= now) {
            buf.extend_from_slice(&encode_frame(&e.packet));
            sent += 1;
            if buf.len() > 64 * 1024 {
                break;
            }
        }
        conn.write_all(&buf).await?;
    }
    Ok(sent)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(behavior: Behavior) -> UeProfile {
        UeProfile { ue_ipv4_addr: Ipv4Addr::new(10, 42, 0, 3), pdu_session_id: 2, behavior, seed: 9 }
    }

    fn servers(n: u8) -> Vec<Ipv4Addr> {
        (1..=n).map(|i| Ipv4Addr::new(198, 18, 0, i)).collect()
    }

    #[test]
    fn iperf_volume_matches_rate_times_time() {
        let p = profile(Behavior::BenignIperf { rate_mbps: 10.0, packet_bytes: IPERF_PACKET_BYTES });
        let ul: u64 = generate_traffic(&p, &servers(1))
            .take_while(|e| e.at < Duration::from_secs(10))
            .filter(|e| e.packet.direction == PacketDirection::Uplink)
            .map(|e| u64::from(e.packet.size_bytes))
            .sum();
        assert!(ul.abs_diff(12_500_000) <= u64::from(IPERF_PACKET_BYTES), "{ul}");
    }

    #[test]
    fn scan_reaches_every_server_once_per_cycle() {
        let p = profile(Behavior::BotScan { gap_ms: 200 });
        let dsts: std::collections::BTreeSet<_> =
            generate_traffic(&p, &servers(20)).take(20 * 5).map(|e| e.packet.flow.normalized_for(p.ue_ipv4_addr).dst_ip).collect();
        assert_eq!(dsts.len(), 20);
    }

    #[test]
    fn streams_are_seeded_and_time_ordered() {
        for b in [
            Behavior::BenignWeb { servers: 3, mean_gap_ms: 300 },
            Behavior::BotScan { gap_ms: 200 },
            Behavior::BenignIperf { rate_mbps: 1.0, packet_bytes: 1250 },
        ] {
            let p = profile(b);
            let a: Vec<_> = generate_traffic(&p, &servers(5)).take(500).collect();
            let b: Vec<_> = generate_traffic(&p, &servers(5)).take(500).collect();
            assert_eq!(a, b);
            assert!(a.windows(2).all(|w| w[0].at <= w[1].at));
            assert!(a.iter().all(|e| e.packet.validate().is_ok()));
        }
    }

    #[test]
    fn web_uses_at_most_its_server_pool() {
        let p = profile(Behavior::BenignWeb { servers: 2, mean_gap_ms: 100 });
        let dsts: std::collections::BTreeSet<_> =
            generate_traffic(&p, &servers(10)).take(1000).map(|e| e.packet.flow.normalized_for(p.ue_ipv4_addr).dst_ip).collect();
        assert!(dsts.len() <= 2);
    }

    #[test]
    fn idle_emits_nothing() {
        assert_eq!(generate_traffic(&profile(Behavior::Idle), &servers(3)).count(), 0);
    }
}
