//! Latency breakdown extraction from the merged event log, and the CSV,
//! JSONL and summary outputs.

use std::collections::BTreeSet;
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::Path;

use nwdaf_loop::ees::{parse_timestamp, Timestamp};
use nwdaf_loop::events::Event;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyBreakdown {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl LatencyBreakdown {
    pub fn ordered(&self) -> bool {
        0.0 < self.t1 && self.t1 <= self.t2 && self.t2 <= self.t3
    }
}

/// Everything measured for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub run: u32,
    pub interval: u32,
    pub bots: Vec<Ipv4Addr>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    /// Bot detected by the engine at least once.
    pub bot_flagged: bool,
    pub benign_flagged: Vec<Ipv4Addr>,
    pub releases: Vec<Ipv4Addr>,
    pub probe_failures: usize,
    /// Successful bot probes sent after its session was released.
    pub post_release_successes: usize,
    pub post_release_probes: usize,
    /// Total model inference time over the run, milliseconds.
    pub inference_ms: f64,
}

impl RunSummary {
    pub fn breakdown(&self) -> Option<LatencyBreakdown> {
        Some(LatencyBreakdown { t1: self.t1?, t2: self.t2?, t3: self.t3? })
    }
}

fn ue_of(e: &Event) -> Option<Ipv4Addr> {
    e.data.get("ue")?.as_str()?.parse().ok()
}

fn secs(from: Timestamp, to: Timestamp) -> f64 {
    (to - from).num_microseconds().unwrap_or(i64::MAX) as f64 / 1e6
}

fn addr_list(v: Option<&Value>) -> BTreeSet<Ipv4Addr> {
    v.and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|x| x.as_str()?.parse().ok()).collect())
        .unwrap_or_default()
}

/// Splits a merged log at `run_started` markers. Events before the first
/// marker are dropped.
pub fn split_runs(events: &[Event]) -> Vec<Vec<Event>> {
    let mut runs: Vec<Vec<Event>> = Vec::new();
    for e in events {
        if e.kind == "run_started" {
            runs.push(Vec::new());
        }
        if let Some(r) = runs.last_mut() {
            r.push(e.clone());
        }
    }
    runs
}

/// Derives the run summary from one run's events.
///
/// t1: first stored report for the bot listing a scan target;
/// t2: first anomaly for the bot;
/// t3: send time plus timeout of the bot's first failed probe that follows a
/// success. All are measured from `attack_started` and only count events
/// after it.
pub fn summarize_run(events: &[Event]) -> RunSummary {
    let mut s = RunSummary::default();
    if let Some(m) = events.iter().find(|e| e.kind == "run_started") {
        s.run = m.data.get("run").and_then(Value::as_u64).unwrap_or(0) as u32;
        s.interval = m.data.get("interval").and_then(Value::as_u64).unwrap_or(0) as u32;
    }
    let attack = events.iter().find(|e| e.kind == "attack_started");
    let bots: BTreeSet<Ipv4Addr> = attack.map(|a| addr_list(a.data.get("ues"))).unwrap_or_default();
    let targets = attack.map(|a| addr_list(a.data.get("targets"))).unwrap_or_default();
    s.bots = bots.iter().copied().collect();

    let anomalies: Vec<&Event> = events.iter().filter(|e| e.kind == "anomaly_detected").collect();
    let mut benign: BTreeSet<Ipv4Addr> = BTreeSet::new();
    for a in &anomalies {
        match ue_of(a) {
            Some(ue) if bots.contains(&ue) => s.bot_flagged = true,
            Some(ue) => {
                benign.insert(ue);
            }
            None => {}
        }
    }
    s.benign_flagged = benign.into_iter().collect();
    s.releases = events.iter().filter(|e| e.kind == "ue_released").filter_map(ue_of).collect();
    s.inference_ms = events
        .iter()
        .filter(|e| e.kind == "inference")
        .filter_map(|e| e.data.get("durationMs")?.as_f64())
        .sum();

    let probes: Vec<(Ipv4Addr, Timestamp, bool, f64)> = events
        .iter()
        .filter(|e| e.kind == "probe_result")
        .filter_map(|e| {
            let sent = parse_timestamp(e.data.get("sentAt")?.as_str()?)?;
            let ok = e.data.get("success")?.as_bool()?;
            let timeout = e.data.get("timeoutMs").and_then(Value::as_f64).unwrap_or(500.0) / 1e3;
            Some((ue_of(e)?, sent, ok, timeout))
        })
        .collect();
    s.probe_failures = probes.iter().filter(|p| !p.2).count();

    for &bot in &bots {
        if let Some(rel) = events.iter().find(|e| e.kind == "ue_released" && ue_of(e) == Some(bot)) {
            let after: Vec<_> = probes.iter().filter(|p| p.0 == bot && p.1 > rel.ts).collect();
            s.post_release_probes += after.len();
            s.post_release_successes += after.iter().filter(|p| p.2).count();
        }
    }

    let Some(attack) = attack else { return s };
    let t0 = attack.ts;
    let first_bot = |kind: &str, extra: &dyn Fn(&Event) -> bool| {
        events
            .iter()
            .filter(|e| e.kind == kind && e.ts >= t0)
            .find(|e| ue_of(e).is_some_and(|u| bots.contains(&u)) && extra(e))
            .map(|e| secs(t0, e.ts))
    };
    s.t1 = first_bot("report_stored", &|e| !addr_list(e.data.get("destinations")).is_disjoint(&targets));
    s.t2 = first_bot("anomaly_detected", &|_| true);
    let mut seen_ok = false;
    for &(_, sent, ok, timeout) in probes.iter().filter(|p| bots.contains(&p.0)) {
        if ok {
            seen_ok = true;
        } else if seen_ok && sent >= t0 {
            s.t3 = Some(secs(t0, sent) + timeout);
            break;
        }
    }
    s
}

pub fn summarize_all(events: &[Event]) -> Vec<RunSummary> {
    split_runs(events).iter().map(|r| summarize_run(r)).collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `run,interval,t1,t2,t3`; unmeasured values are empty.
pub fn write_breakdown_csv(w: impl Write, runs: &[RunSummary]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run", "interval", "t1", "t2", "t3"])?;
    for r in runs {
        out.write_record([r.run.to_string(), r.interval.to_string(), cell(r.t1), cell(r.t2), cell(r.t3)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_events_jsonl(mut w: impl Write, events: &[Event]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation; zero std for fewer than two values.
pub fn stat(xs: impl IntoIterator<Item = f64>) -> Stat {
    let xs: Vec<f64> = xs.into_iter().collect();
    let n = xs.len();
    if n == 0 {
        return Stat::default();
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = if n < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    Stat { mean, std, n }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IntervalSummary {
    pub interval: u32,
    pub runs: usize,
    pub detected: usize,
    pub t1: Stat,
    pub t2: Stat,
    pub t3: Stat,
    pub benign_false_positives: usize,
}

pub fn interval_summaries(runs: &[RunSummary]) -> Vec<IntervalSummary> {
    let intervals: BTreeSet<u32> = runs.iter().map(|r| r.interval).collect();
    intervals
        .into_iter()
        .map(|i| {
            let rs: Vec<&RunSummary> = runs.iter().filter(|r| r.interval == i).collect();
            IntervalSummary {
                interval: i,
                runs: rs.len(),
                detected: rs.iter().filter(|r| r.bot_flagged).count(),
                t1: stat(rs.iter().filter_map(|r| r.t1)),
                t2: stat(rs.iter().filter_map(|r| r.t2)),
                t3: stat(rs.iter().filter_map(|r| r.t3)),
                benign_false_positives: rs.iter().map(|r| r.benign_flagged.len()).sum(),
            }
        })
        .collect()
}

pub fn write_summary_csv(w: impl Write, rows: &[IntervalSummary]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "interval", "runs", "detected", "t1_mean", "t1_std", "t2_mean", "t2_std", "t3_mean", "t3_std", "benign_fp",
    ])?;
    for s in rows {
        out.write_record([
            s.interval.to_string(),
            s.runs.to_string(),
            s.detected.to_string(),
            format!("{:.6}", s.t1.mean),
            format!("{:.6}", s.t1.std),
            format!("{:.6}", s.t2.mean),
            format!("{:.6}", s.t2.std),
            format!("{:.6}", s.t3.mean),
            format!("{:.6}", s.t3.std),
            s.benign_false_positives.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Human-readable table of the per-interval summary.
pub fn render_summary(rows: &[IntervalSummary]) -> String {
    let mut s = String::from("interval  runs  detected   t1 mean±std    t2 mean±std    t3 mean±std   benignFP\n");
    for r in rows {
        s.push_str(&format!(
            "{:>7}s  {:>4}  {:>8}  {:>6.3}±{:<6.3}  {:>6.3}±{:<6.3}  {:>6.3}±{:<6.3}  {:>8}\n",
            r.interval, r.runs, r.detected, r.t1.mean, r.t1.std, r.t2.mean, r.t2.std, r.t3.mean, r.t3.std, r.benign_false_positives
        ));
    }
    s
}

/// Writes `breakdown.csv`, `summary.csv` and `events.jsonl` into `dir`.
pub fn emit_report(dir: &Path, runs: &[RunSummary], events: &[Event]) -> std::io::Result<Vec<IntervalSummary>> {
    std::fs::create_dir_all(dir)?;
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    write_breakdown_csv(std::fs::File::create(dir.join("breakdown.csv"))?, runs).map_err(io)?;
    let summary = interval_summaries(runs);
    write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?, &summary).map_err(io)?;
    write_events_jsonl(std::io::BufWriter::new(std::fs::File::create(dir.join("events.jsonl"))?), events)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone, Utc};
    use serde_json::json;

    fn ev(ms: i64, kind: &str, data: Value) -> Event {
        let base = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
        Event { ts: base + Duration::milliseconds(ms), service: "t".into(), kind: kind.into(), data }
    }

    fn probe(ms: i64, ok: bool) -> Event {
        let base = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
        let sent = nwdaf_loop::ees::format_timestamp(&(base + Duration::milliseconds(ms)));
        ev(ms + 10, "probe_result", json!({"ue": "10.42.0.2", "sentAt": sent, "success": ok, "timeoutMs": 500.0}))
    }

    fn run() -> Vec<Event> {
        vec![
            ev(0, "run_started", json!({"run": 3, "interval": 1})),
            probe(100, true),
            ev(1000, "attack_started", json!({"ues": ["10.42.0.2"], "targets": ["198.18.0.1", "198.18.0.2"]})),
            probe(1100, true),
            ev(1200, "report_stored", json!({"ue": "10.42.0.3", "destinations": ["198.19.0.1"]})),
            ev(1300, "report_stored", json!({"ue": "10.42.0.2", "destinations": ["10.42.0.1"]})),
            ev(1400, "report_stored", json!({"ue": "10.42.0.2", "destinations": ["198.18.0.2"]})),
            ev(2500, "anomaly_detected", json!({"ue": "10.42.0.2", "confidence": 0.9})),
            ev(2600, "ue_released", json!({"ue": "10.42.0.2"})),
            probe(3100, false),
            probe(4100, false),
        ]
    }

    #[test]
    fn breakdown_is_measured_from_attack_start() {
        let s = summarize_run(&run());
        assert_eq!((s.run, s.interval), (3, 1));
        let b = s.breakdown().unwrap();
        assert!((b.t1 - 0.4).abs() < 1e-9);
        assert!((b.t2 - 1.5).abs() < 1e-9);
        assert!((b.t3 - 2.6).abs() < 1e-9);
        assert!(b.ordered());
        assert!(s.bot_flagged && s.benign_flagged.is_empty());
        assert_eq!((s.post_release_probes, s.post_release_successes), (2, 0));
    }

    #[test]
    fn twenty_runs_three_intervals_give_sixty_rows() {
        let mut all = Vec::new();
        for i in [1u32, 3, 5] {
            for r in 0..20u32 {
                let mut e = run();
                e[0] = ev(0, "run_started", json!({"run": r, "interval": i}));
                all.extend(e);
            }
        }
        let runs = summarize_all(&all);
        let mut buf = Vec::new();
        write_breakdown_csv(&mut buf, &runs).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 61);
        let sum = interval_summaries(&runs);
        assert_eq!(sum.len(), 3);
        assert!(sum.iter().all(|s| s.runs == 20 && (s.t3.mean - 2.6).abs() < 1e-9 && s.t3.std < 1e-9));
    }

    #[test]
    fn zero_runs_give_header_only() {
        let mut buf = Vec::new();
        write_breakdown_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "run,interval,t1,t2,t3\n");
    }

    #[test]
    fn negative_control_has_no_breakdown() {
        let e = vec![ev(0, "run_started", json!({"run": 0, "interval": 1})), probe(100, true), probe(1100, true)];
        let s = summarize_run(&e);
        assert!(s.breakdown().is_none());
        assert_eq!((s.probe_failures, s.releases.len()), (0, 0));
    }

    #[test]
    fn sample_std_matches_hand_computation() {
        let s = stat([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
