//! Simulated SMF: releases the PDU sessions of UEs the NWDAF flags.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::Parser;
use loop_harness::service_events;
use nwdaf_loop::smf::service::{start, SmfConfig};
use nwdaf_loop::smf::Smf;
use serde_json::json;

#[derive(Parser)]
#[command(about = "Simulated SMF closing the mitigation loop")]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    events: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> Result<()> {
    loop_harness::init_tracing();
    let args = Args::parse();
    let cfg = SmfConfig::load(&args.config)?;
    let smf = Arc::new(Smf::new(cfg.upf_uri.clone(), cfg.sessions.clone(), service_events(args.events.as_deref())?));
    let rt = start(smf, &cfg).await?;
    loop_harness::announce_ready(json!({ "http": rt.base_uri() }));
    std::future::pending::<()>().await;
    Ok(())
}
