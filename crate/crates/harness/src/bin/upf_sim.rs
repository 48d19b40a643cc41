//! Simulated UPF: EES subscriptions over HTTP, packet descriptors over TCP.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::Parser;
use loop_harness::service_events;
use nwdaf_loop::upf::service::{start, UpfConfig};
use nwdaf_loop::upf::{Upf, UpfOptions};
use serde_json::json;

#[derive(Parser)]
#[command(about = "Simulated UPF with the EES usage-reporting extension")]
struct Args {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Append service events to this JSONL file.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<()> {
    loop_harness::init_tracing();
    let args = Args::parse();
    let cfg = match &args.config {
        Some(p) => UpfConfig::load(p)?,
        None => UpfConfig::default(),
    };
    let upf = Arc::new(Upf::new(UpfOptions::default(), service_events(args.events.as_deref())?));
    let rt = start(upf, &cfg).await?;
    loop_harness::announce_ready(json!({ "http": rt.base_uri(), "ingest": rt.ingest_addr.to_string() }));
    std::future::pending::<()>().await;
    Ok(())
}
