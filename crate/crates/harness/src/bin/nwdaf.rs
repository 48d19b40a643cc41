//! NWDAF: collects UPF usage reports and serves abnormal-behaviour analytics.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::Parser;
use loop_harness::service_events;
use nwdaf_loop::engine::BotEngine;
use nwdaf_loop::nwdaf::service::{start, NwdafConfig};
use nwdaf_loop::nwdaf::{Nwdaf, ReportStore};
use serde_json::json;

#[derive(Parser)]
#[command(about = "NWDAF with the graph-based bot detection engine")]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<()> {
    loop_harness::init_tracing();
    let args = Args::parse();
    let cfg = match &args.config {
        Some(p) => NwdafConfig::load(p)?,
        None => NwdafConfig::default(),
    };
    let store = match &cfg.store_path {
        Some(p) => {
            let (store, stats) = ReportStore::open(p)?;
            if stats.skipped > 0 || stats.truncated_bytes > 0 {
                tracing::warn!("report store recovery: {stats:?}");
            }
            store
        }
        None => ReportStore::in_memory(),
    };
    let nwdaf = Arc::new(Nwdaf::new(store, BotEngine::new(cfg.threshold), service_events(args.events.as_deref())?));
    let rt = start(nwdaf, &cfg).await?;
    loop_harness::announce_ready(json!({ "http": rt.base_uri() }));
    std::future::pending::<()>().await;
    Ok(())
}
