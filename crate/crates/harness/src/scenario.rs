//! Closed-loop scenario: benign traffic and probes, a phased bot attack,
//! detection, release, and the per-run latency breakdown.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use nwdaf_loop::ees::Timestamp;
use nwdaf_loop::events::{Event, EventLog};
use nwdaf_loop::mlprov::ForestModel;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::probe::{first_failure_after_success, probe_loop, ProbeRecord, ProbeTarget};
use crate::report::{summarize_run, RunSummary};
use crate::stack::{Mode, Stack, StackSpec};
use crate::traffic::{drive_traffic, generate_traffic, Behavior, UeProfile};

fn one() -> u32 {
    1
}

fn default_duration() -> f64 {
    30.0
}

fn default_timeout() -> f64 {
    0.5
}

fn default_tail() -> f64 {
    2.5
}

fn default_threshold() -> f64 {
    nwdaf_loop::engine::DEFAULT_THRESHOLD
}

fn default_gateway() -> Ipv4Addr {
    Ipv4Addr::new(10, 42, 0, 1)
}

/// `count` consecutive addresses starting at 198.18.0.1.
pub fn server_block(count: usize) -> Vec<Ipv4Addr> {
    (1..=count as u32).map(|i| Ipv4Addr::from(u32::from(Ipv4Addr::new(198, 18, 0, 0)) + i)).collect()
}

fn default_servers() -> Vec<Ipv4Addr> {
    server_block(20)
}

fn default_benign_servers() -> Vec<Ipv4Addr> {
    (1..=3).map(|i| Ipv4Addr::new(198, 19, 0, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub ues: Vec<UeProfile>,
    /// Scan targets.
    #[serde(default = "default_servers")]
    pub servers: Vec<Ipv4Addr>,
    /// Servers used by benign profiles.
    #[serde(default = "default_benign_servers")]
    pub benign_servers: Vec<Ipv4Addr>,
    #[serde(default = "one")]
    pub collection_period_s: u32,
    #[serde(default = "one")]
    pub smf_period_s: u32,
    /// Upper bound on a run, measured from attack start (or from the first
    /// stored report when there is no bot).
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "one")]
    pub runs: u32,
    #[serde(default = "default_timeout")]
    pub probe_timeout_s: f64,
    /// Observation time kept after the bot loses connectivity.
    #[serde(default = "default_tail")]
    pub tail_s: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gateway")]
    pub gateway: Ipv4Addr,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Model to provision; the synthetic-corpus model is trained when absent.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default)]
    pub intervals: Option<Vec<u32>>,
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ScenarioConfig = toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// One bot scanning 20 servers and one benign web UE.
    pub fn bot_and_benign(collection_period_s: u32, runs: u32) -> Self {
        ScenarioConfig {
            ues: vec![
                UeProfile { ue_ipv4_addr: Ipv4Addr::new(10, 42, 0, 2), pdu_session_id: 1, behavior: Behavior::BotScan { gap_ms: 200 }, seed: 11 },
                UeProfile {
                    ue_ipv4_addr: Ipv4Addr::new(10, 42, 0, 3),
                    pdu_session_id: 2,
                    behavior: Behavior::BenignWeb { servers: 3, mean_gap_ms: 700 },
                    seed: 12,
                },
            ],
            servers: default_servers(),
            benign_servers: default_benign_servers(),
            collection_period_s,
            smf_period_s: 1,
            duration_s: default_duration(),
            runs,
            probe_timeout_s: default_timeout(),
            tail_s: default_tail(),
            seed: 1,
            gateway: default_gateway(),
            threshold: default_threshold(),
            model_path: None,
            intervals: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.collection_period_s == 0 || self.smf_period_s == 0 {
            bail!("periods must be positive");
        }
        let longest = self.intervals.iter().flatten().copied().chain([self.collection_period_s]).max().unwrap_or(0);
        if self.duration_s <= f64::from(longest) {
            bail!("duration_s must exceed the collection period ({longest} s)");
        }
        if !(self.probe_timeout_s > 0.0 && self.probe_timeout_s < 1.0) {
            bail!("probe_timeout_s must lie in (0, 1)");
        }
        let mut ips = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for u in &self.ues {
            u.validate(self.servers.len()).map_err(anyhow::Error::msg)?;
            if !ips.insert(u.ue_ipv4_addr) || !ids.insert(u.pdu_session_id) {
                bail!("UE {} duplicates an address or session id", u.ue_ipv4_addr);
            }
        }
        if self.intervals.as_ref().is_some_and(|i| i.contains(&0)) {
            bail!("intervals must be positive");
        }
        Ok(())
    }

    pub fn bots(&self) -> Vec<&UeProfile> {
        self.ues.iter().filter(|u| u.is_bot()).collect()
    }

    fn targets_for(&self, u: &UeProfile) -> Vec<Ipv4Addr> {
        if u.is_bot() {
            self.servers.clone()
        } else {
            self.benign_servers.clone()
        }
    }

    fn seeded(&self, u: &UeProfile) -> UeProfile {
        UeProfile { seed: u.seed ^ self.seed.rotate_left(17), ..u.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub events: Vec<Event>,
    pub timed_out: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioReport {
    pub runs: Vec<RunSummary>,
    pub events: Vec<Event>,
    pub timeouts: usize,
}

struct Workers {
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl Workers {
    fn new() -> Self {
        Workers { stop: watch::channel(false).0, tasks: Vec::new() }
    }

    fn traffic(&mut self, stack: &Stack, profile: UeProfile, targets: Vec<Ipv4Addr>) {
        let rx = self.stop.subscribe();
        let ingest = stack.ingest;
        self.tasks.push(tokio::spawn(async move {
            if let Err(e) = drive_traffic(generate_traffic(&profile, &targets), ingest, rx).await {
                tracing::warn!("traffic of {} stopped: {e}", profile.ue_ipv4_addr);
            }
        }));
    }

    async fn finish(self) {
        let _ = self.stop.send(true);
        for t in self.tasks {
            if tokio::time::timeout(Duration::from_secs(2), t).await.is_err() {
                tracing::warn!("worker did not stop in time");
            }
        }
    }
}

async fn sleep_until_ts(at: Timestamp) {
    if let Ok(d) = (at - Utc::now()).to_std() {
        tokio::time::sleep(d).await;
    }
}

fn first_report(stack: &Stack) -> Option<Timestamp> {
    stack.events().into_iter().find(|e| e.kind == "report_stored").map(|e| e.ts)
}

/// Executes one run with a fresh set of services.
pub async fn run_once(
    cfg: &ScenarioConfig,
    run: u32,
    runs: u32,
    interval: u32,
    mode: Mode,
    model: &ForestModel,
    workdir: &Path,
) -> Result<RunOutcome> {
    let events = EventLog::new();
    events.record("harness", "run_started", json!({ "run": run, "interval": interval, "seed": cfg.seed }));
    let spec = StackSpec {
        sessions: cfg.ues.iter().map(|u| (u.ue_ipv4_addr, u.pdu_session_id)).collect(),
        collection_period_s: interval,
        smf_period_s: cfg.smf_period_s,
        threshold: cfg.threshold,
        workdir: workdir.to_path_buf(),
        model: model.clone(),
        smf_phase: 0.5,
    };
    let stack = Stack::start(&spec, mode, events.clone()).await?;
    let outcome = drive_run(cfg, run, runs, interval, &stack, &events).await;
    let all = stack.shutdown().await;
    let timed_out = outcome?;
    let summary = summarize_run(&all);
    Ok(RunOutcome { summary, events: all, timed_out })
}

async fn drive_run(cfg: &ScenarioConfig, run: u32, runs: u32, interval: u32, stack: &Stack, events: &EventLog) -> Result<bool> {
    let mut workers = Workers::new();
    let probes: Arc<Mutex<Vec<ProbeRecord>>> = Arc::default();
    for u in &cfg.ues {
        if !u.is_bot() && u.behavior != Behavior::Idle {
            workers.traffic(stack, cfg.seeded(u), cfg.targets_for(u));
        }
        let target = ProbeTarget {
            ue: u.ue_ipv4_addr,
            pdu_session_id: u.pdu_session_id,
            gateway: cfg.gateway,
            ingest: stack.ingest,
            timeout: Duration::from_secs_f64(cfg.probe_timeout_s),
        };
        let (ev, recs, rx) = (events.clone(), probes.clone(), workers.stop.subscribe());
        workers.tasks.push(tokio::spawn(async move {
            if let Err(e) = probe_loop(target, ev, recs, rx).await {
                tracing::warn!("probe loop stopped: {e}");
            }
        }));
    }

    let wait_limit = Duration::from_secs(3 * u64::from(interval) + 10);
    let started = tokio::time::Instant::now();
    let r0 = loop {
        if let Some(ts) = first_report(stack) {
            break ts;
        }
        if started.elapsed() > wait_limit {
            workers.finish().await;
            bail!("no usage report reached the NWDAF within {wait_limit:?}");
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    };

    let bots: Vec<UeProfile> = cfg.bots().into_iter().cloned().collect();
    let mut timed_out = false;
    if bots.is_empty() {
        sleep_until_ts(r0 + chrono::Duration::milliseconds((cfg.duration_s * 1e3) as i64)).await;
    } else {
        // Spread attack starts evenly over one collection period.
        let phase = (f64::from(run) + 0.5) / f64::from(runs.max(1));
        let attack_at = r0 + chrono::Duration::microseconds((phase * f64::from(interval) * 1e6) as i64);
        sleep_until_ts(attack_at).await;
        let bot_ips: Vec<Ipv4Addr> = bots.iter().map(|b| b.ue_ipv4_addr).collect();
        let t0 = events.record("harness", "attack_started", json!({ "ues": bot_ips, "targets": cfg.servers, "phase": phase }));
        for b in &bots {
            workers.traffic(stack, cfg.seeded(b), cfg.targets_for(b));
        }
        let deadline = t0 + chrono::Duration::milliseconds((cfg.duration_s * 1e3) as i64);
        loop {
            let cut = {
                let recs = probes.lock();
                bot_ips.iter().all(|ip| {
                    let mine: Vec<ProbeRecord> = recs.iter().filter(|r| r.ue == *ip).cloned().collect();
                    first_failure_after_success(&mine).is_some_and(|f| f.sent_at >= t0)
                })
            };
            if cut {
                break;
            }
            if Utc::now() > deadline {
                timed_out = true;
                events.record("harness", "scenario_timeout", json!({ "afterSeconds": cfg.duration_s }));
                break;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        tokio::time::sleep(Duration::from_secs_f64(cfg.tail_s)).await;
    }
    workers.finish().await;
    events.record("harness", "run_finished", json!({ "run": run, "interval": interval }));
    Ok(timed_out)
}

/// Runs `cfg.runs` repetitions for each interval, each with fresh services.
pub async fn run_scenario(
    cfg: &ScenarioConfig,
    intervals: &[u32],
    mode: Mode,
    model: &ForestModel,
    workdir: &Path,
    mut progress: impl FnMut(&RunSummary),
) -> Result<ScenarioReport> {
    cfg.validate()?;
    let mut report = ScenarioReport::default();
    for &interval in intervals {
        for run in 0..cfg.runs {
            let dir = workdir.join(format!("i{interval}-r{run}"));
            if dir.exists() {
                std::fs::remove_dir_all(&dir)?;
            }
            let out = run_once(cfg, run, cfg.runs, interval, mode, model, &dir).await?;
            progress(&out.summary);
            report.timeouts += usize::from(out.timed_out);
            report.runs.push(out.summary);
            report.events.extend(out.events);
        }
    }
    Ok(report)
}
