//! Launches the four services either inside this process or as child
//! processes on localhost.

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use nwdaf_loop::ees::SnssaiId;
use nwdaf_loop::engine::BotEngine;
use nwdaf_loop::events::{read_events, Event, EventLog};
use nwdaf_loop::http::ServerHandle;
use nwdaf_loop::mlprov::service::MlprovConfig;
use nwdaf_loop::mlprov::{ForestModel, Registry};
use nwdaf_loop::nwdaf::service::{NwdafConfig, NwdafRuntime};
use nwdaf_loop::nwdaf::{Nwdaf, ReportStore};
use nwdaf_loop::smf::service::{SmfConfig, SmfRuntime};
use nwdaf_loop::smf::{Smf, UeSessionBinding};
use nwdaf_loop::upf::service::{UpfConfig, UpfRuntime};
use nwdaf_loop::upf::{PduSession, Upf, UpfOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::process::{Child, Command};

pub const STARTUP_TIMEOUT: Duration = Duration::from_secs(15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Inproc,
    Multiproc,
}

/// Paths of the service executables.
#[derive(Debug, Clone)]
pub struct ServiceBinaries {
    pub upf: PathBuf,
    pub nwdaf: PathBuf,
    pub smf: PathBuf,
    pub mlprov: PathBuf,
}

impl ServiceBinaries {
    pub fn in_dir(dir: &Path) -> Self {
        let exe = |n: &str| dir.join(format!("{n}{}", std::env::consts::EXE_SUFFIX));
        ServiceBinaries { upf: exe("upf-sim"), nwdaf: exe("nwdaf"), smf: exe("smf-sim"), mlprov: exe("mlprov") }
    }

    /// Next to the running executable, or one level up when running from
    /// cargo's `deps/` directory.
    pub fn locate() -> Result<Self> {
        let exe = std::env::current_exe()?;
        let mut dir = exe.parent().ok_or_else(|| anyhow!("executable has no parent"))?.to_path_buf();
        if dir.ends_with("deps") {
            dir.pop();
        }
        let bins = Self::in_dir(&dir);
        for p in [&bins.upf, &bins.nwdaf, &bins.smf, &bins.mlprov] {
            if !p.exists() {
                bail!("service binary {} not found; build the workspace binaries first", p.display());
            }
        }
        Ok(bins)
    }
}

#[derive(Debug, Clone)]
pub struct StackSpec {
    pub sessions: Vec<(Ipv4Addr, u32)>,
    pub collection_period_s: u32,
    pub smf_period_s: u32,
    pub threshold: f64,
    pub workdir: PathBuf,
    pub model: ForestModel,
    /// SMF subscription offset after the NWDAF's UPF subscription, as a
    /// fraction of the SMF period. Keeps analysis ticks away from report
    /// arrivals.
    pub smf_phase: f64,
}

enum Services {
    Inproc { upf: UpfRuntime, nwdaf: NwdafRuntime, smf: SmfRuntime, ml: ServerHandle },
    Multiproc { children: Vec<Child>, event_files: Vec<PathBuf> },
}

/// A running UPF + NWDAF + SMF + model provisioning quartet.
pub struct Stack {
    pub upf_uri: String,
    pub ingest: SocketAddr,
    pub nwdaf_uri: String,
    pub smf_uri: String,
    pub mlprov_uri: String,
    services: Services,
    events: EventLog,
}

fn sessions(spec: &StackSpec) -> (Vec<PduSession>, Vec<UeSessionBinding>) {
    let snssai = SnssaiId::new(1, None);
    spec.sessions
        .iter()
        .map(|&(ue, id)| (PduSession::new(id, ue, snssai.clone()), UeSessionBinding::new(ue, id)))
        .unzip()
}

async fn register_model(client: &reqwest::Client, mlprov_uri: &str, model: &ForestModel) -> Result<()> {
    let r = client.post(format!("{mlprov_uri}/admin/models")).json(model).send().await?;
    if !r.status().is_success() {
        bail!("model registration answered {}: {}", r.status(), r.text().await.unwrap_or_default());
    }
    Ok(())
}

async fn get_json(client: &reqwest::Client, url: &str) -> Option<Value> {
    client.get(url).send().await.ok()?.json().await.ok()
}

async fn poll_until(client: &reqwest::Client, url: &str, ready: impl Fn(&Value) -> bool) -> Result<()> {
    let deadline = tokio::time::Instant::now() + STARTUP_TIMEOUT;
    loop {
        let v = get_json(client, url).await;
        if v.as_ref().is_some_and(&ready) {
            return Ok(());
        }
        if tokio::time::Instant::now() > deadline {
            bail!("{url} not ready after {STARTUP_TIMEOUT:?}: {v:?}");
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
}

/// Resolves once the NWDAF holds its UPF subscription and a bound model,
/// then waits out the SMF phase offset.
async fn nwdaf_ready(client: &reqwest::Client, nwdaf: &str, spec: &StackSpec) -> Result<()> {
    poll_until(client, &format!("{nwdaf}/healthz"), |n| n["sbi"]["state"] == "SUBSCRIBED" && !n["model"].is_null()).await?;
    tokio::time::sleep(Duration::from_secs_f64(spec.smf_phase * f64::from(spec.smf_period_s))).await;
    Ok(())
}

async fn smf_ready(client: &reqwest::Client, smf: &str) -> Result<()> {
    poll_until(client, &format!("{smf}/healthz"), |s| !s["subscriptionId"].is_null()).await
}

impl Stack {
    pub async fn start(spec: &StackSpec, mode: Mode, events: EventLog) -> Result<Stack> {
        std::fs::create_dir_all(&spec.workdir)?;
        let stack = match mode {
            Mode::Inproc => Self::start_inproc(spec, events).await?,
            Mode::Multiproc => Self::start_multiproc(spec, events, &ServiceBinaries::locate()?).await?,
        };
        Ok(stack)
    }

    pub async fn start_with_binaries(spec: &StackSpec, events: EventLog, bins: &ServiceBinaries) -> Result<Stack> {
        std::fs::create_dir_all(&spec.workdir)?;
        Self::start_multiproc(spec, events, bins).await
    }

    async fn start_inproc(spec: &StackSpec, events: EventLog) -> Result<Stack> {
        let client = nwdaf_loop::http::client(Duration::from_secs(2));
        let registry = Arc::new(Registry::open(spec.workdir.join("registry"))?);
        let ml = nwdaf_loop::mlprov::service::start(
            registry,
            &MlprovConfig { registry_dir: spec.workdir.join("registry"), listen_addr: "127.0.0.1:0".into() },
        )
        .await?;
        let mlprov_uri = ml.base_uri();
        register_model(&client, &mlprov_uri, &spec.model).await?;

        let (pdu, bindings) = sessions(spec);
        let upf = Arc::new(Upf::new(UpfOptions::default(), events.clone()));
        let upf_rt = nwdaf_loop::upf::service::start(upf, &UpfConfig { sessions: pdu, ..UpfConfig::default() }).await?;
        let upf_uri = upf_rt.base_uri();

        let store = ReportStore::open(spec.workdir.join("reports.jsonl"))?.0;
        let nwdaf = Arc::new(Nwdaf::new(store, BotEngine::new(spec.threshold), events.clone()));
        let ncfg = NwdafConfig {
            upf_uri: Some(upf_uri.clone()),
            collection_period_s: spec.collection_period_s,
            ml_provision_uri: Some(mlprov_uri.clone()),
            threshold: spec.threshold,
            ..NwdafConfig::default()
        };
        let nwdaf_rt = nwdaf_loop::nwdaf::service::start(nwdaf, &ncfg).await?;
        let nwdaf_uri = nwdaf_rt.base_uri();
        nwdaf_ready(&client, &nwdaf_uri, spec).await?;

        let smf = Arc::new(Smf::new(upf_uri.clone(), bindings.clone(), events.clone()));
        let scfg = SmfConfig {
            listen_addr: "127.0.0.1:0".into(),
            nwdaf_uri: nwdaf_uri.clone(),
            upf_uri: upf_uri.clone(),
            report_period_s: spec.smf_period_s,
            sessions: bindings,
        };
        let smf_rt = nwdaf_loop::smf::service::start(smf, &scfg).await?;
        let smf_uri = smf_rt.base_uri();
        smf_ready(&client, &smf_uri).await?;
        Ok(Stack {
            upf_uri,
            ingest: upf_rt.ingest_addr,
            nwdaf_uri,
            smf_uri,
            mlprov_uri,
            services: Services::Inproc { upf: upf_rt, nwdaf: nwdaf_rt, smf: smf_rt, ml },
            events,
        })
    }

    async fn start_multiproc(spec: &StackSpec, events: EventLog, bins: &ServiceBinaries) -> Result<Stack> {
        let client = nwdaf_loop::http::client(Duration::from_secs(2));
        let dir = &spec.workdir;
        let mut children = Vec::new();
        let mut event_files = Vec::new();
        let write = |name: &str, body: String| -> Result<PathBuf> {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            Ok(p)
        };

        let ml_cfg = MlprovConfig { registry_dir: dir.join("registry"), listen_addr: "127.0.0.1:0".into() };
        let path = write("mlprov.toml", toml::to_string(&ml_cfg)?)?;
        let (child, ready) = spawn(&bins.mlprov, &["serve", "--config"], &path, &dir.join("events-mlprov.jsonl")).await?;
        children.push(child);
        event_files.push(dir.join("events-mlprov.jsonl"));
        let mlprov_uri = ready_uri(&ready, "http")?;
        register_model(&client, &mlprov_uri, &spec.model).await?;

        let (pdu, bindings) = sessions(spec);
        let path = write("upf.toml", toml::to_string(&UpfConfig { sessions: pdu, ..UpfConfig::default() })?)?;
        let (child, ready) = spawn(&bins.upf, &["--config"], &path, &dir.join("events-upf.jsonl")).await?;
        children.push(child);
        event_files.push(dir.join("events-upf.jsonl"));
        let upf_uri = ready_uri(&ready, "http")?;
        let ingest: SocketAddr = ready_uri(&ready, "ingest")?.parse()?;

        let ncfg = NwdafConfig {
            upf_uri: Some(upf_uri.clone()),
            collection_period_s: spec.collection_period_s,
            ml_provision_uri: Some(mlprov_uri.clone()),
            threshold: spec.threshold,
            store_path: Some(dir.join("reports.jsonl")),
            ..NwdafConfig::default()
        };
        let path = write("nwdaf.toml", toml::to_string(&ncfg)?)?;
        let (child, ready) = spawn(&bins.nwdaf, &["--config"], &path, &dir.join("events-nwdaf.jsonl")).await?;
        children.push(child);
        event_files.push(dir.join("events-nwdaf.jsonl"));
        let nwdaf_uri = ready_uri(&ready, "http")?;
        nwdaf_ready(&client, &nwdaf_uri, spec).await?;

        let scfg = SmfConfig {
            listen_addr: "127.0.0.1:0".into(),
            nwdaf_uri: nwdaf_uri.clone(),
            upf_uri: upf_uri.clone(),
            report_period_s: spec.smf_period_s,
            sessions: bindings,
        };
        let path = write("smf.toml", toml::to_string(&scfg)?)?;
        let (child, ready) = spawn(&bins.smf, &["--config"], &path, &dir.join("events-smf.jsonl")).await?;
        children.push(child);
        event_files.push(dir.join("events-smf.jsonl"));
        let smf_uri = ready_uri(&ready, "http")?;

        smf_ready(&client, &smf_uri).await?;
        Ok(Stack {
            upf_uri,
            ingest,
            nwdaf_uri,
            smf_uri,
            mlprov_uri,
            services: Services::Multiproc { children, event_files },
            events,
        })
    }

    /// Harness events plus every service's events, ordered by timestamp.
    pub fn events(&self) -> Vec<Event> {
        let mut all = self.events.snapshot();
        if let Services::Multiproc { event_files, .. } = &self.services {
            for f in event_files {
                all.extend(read_events(f).unwrap_or_default());
            }
            all.sort_by_key(|e| e.ts);
        }
        all
    }

    pub async fn shutdown(self) -> Vec<Event> {
        let events = self.events();
        match self.services {
            Services::Inproc { upf, nwdaf, smf, ml } => {
                smf.shutdown().await;
                nwdaf.shutdown().await;
                upf.shutdown().await;
                ml.shutdown().await;
            }
            Services::Multiproc { mut children, .. } => {
                for c in children.iter_mut().rev() {
                    let _ = c.kill().await;
                }
            }
        }
        events
    }
}

fn ready_uri(ready: &Value, key: &str) -> Result<String> {
    ready[key].as_str().map(str::to_string).ok_or_else(|| anyhow!("READY line lacks {key}: {ready}"))
}

/// Starts a service binary and waits for its `READY {json}` line.
async fn spawn(bin: &Path, args: &[&str], config: &Path, events: &Path) -> Result<(Child, Value)> {
    let mut child = Command::new(bin)
        .args(args)
        .arg(config)
        .arg("--events")
        .arg(events)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .kill_on_drop(true)
        .spawn()
        .with_context(|| format!("starting {}", bin.display()))?;
    let stdout = child.stdout.take().expect("stdout is piped");
    let mut lines = BufReader::new(stdout).lines();
    let ready = tokio::time::timeout(STARTUP_TIMEOUT, async {
        while let Some(line) = lines.next_line().await? {
            if let Some(rest) = line.strip_prefix("READY ") {
                return Ok::<_, anyhow::Error>(serde_json::from_str::<Value>(rest)?);
            }
        }
        bail!("{} exited before reporting readiness", bin.display())
    })
    .await
    .map_err(|_| anyhow!("{} did not report readiness", bin.display()))??;
    // Keep draining stdout so the child never blocks on a full pipe.
    tokio::spawn(async move { while let Ok(Some(_)) = lines.next_line().await {} });
    Ok((child, ready))
}
