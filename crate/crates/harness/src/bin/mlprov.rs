//! Model training and the model provisioning service.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use loop_harness::csvio::{ingest_flow_csv, read_features};
use loop_harness::service_events;
use nwdaf_loop::engine::FEATURE_SCHEMA;
use nwdaf_loop::mlprov::service::{start, MlprovConfig};
use nwdaf_loop::mlprov::train::accuracy;
use nwdaf_loop::mlprov::{train_forest, ForestModel, Registry, TrainParams};
use serde_json::json;

#[derive(Parser)]
#[command(about = "Random-forest training and model provisioning")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a forest from a flow CSV (srcIp,dstIp,...,label) or a feature CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 10)]
        max_depth: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = loop_harness::corpus::MODEL_NAME)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the registry, optionally registering model files at start-up.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        register: Vec<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
    },
}

fn load_rows(path: &PathBuf) -> Result<(Vec<String>, Vec<(Vec<f64>, u8)>)> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let flows = rdr.headers()?.iter().any(|h| h == "srcIp");
    if flows {
        let ingest = ingest_flow_csv(path)?;
        if ingest.malformed > 0 {
            eprintln!("skipped {} malformed rows", ingest.malformed);
        }
        Ok((FEATURE_SCHEMA.iter().map(|s| s.to_string()).collect(), ingest.labelled()))
    } else {
        let (schema, rows, skipped) = read_features(std::fs::File::open(path)?)?;
        if skipped > 0 {
            eprintln!("skipped {skipped} unlabelled or malformed rows");
        }
        Ok((schema, rows))
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    loop_harness::init_tracing();
    match Args::parse().cmd {
        Cmd::Train { data, trees, max_depth, seed, name, out } => {
            let (schema, rows) = load_rows(&data)?;
            if rows.is_empty() {
                bail!("{} has no labelled rows", data.display());
            }
            let schema: Vec<&str> = schema.iter().map(String::as_str).collect();
            let params = TrainParams { num_trees: trees, max_depth, seed, features_per_split: None };
            let outcome = train_forest(&name, &schema, &rows, &params)?;
            if outcome.degenerate {
                eprintln!("warning: only one class present; the model is a constant predictor");
            }
            std::fs::write(&out, outcome.model.to_json())?;
            eprintln!("trained {trees} trees on {} rows; training accuracy {:.4}", rows.len(), accuracy(&outcome.model, &rows));
        }
        Cmd::Serve { config, register, events } => {
            let cfg = MlprovConfig::load(&config)?;
            let registry = Arc::new(Registry::open(&cfg.registry_dir)?);
            for path in &register {
                let model: ForestModel = serde_json::from_slice(&std::fs::read(path)?)
                    .with_context(|| format!("parsing {}", path.display()))?;
                let (d, _) = registry.register(model)?;
                eprintln!("registered {} v{}", d.name, d.version.unwrap_or_default());
            }
            let log = service_events(events.as_deref())?;
            let handle = start(registry, &cfg).await?;
            log.record("mlprov", "service_started", json!({ "uri": handle.base_uri() }));
            loop_harness::announce_ready(json!({ "http": handle.base_uri() }));
            std::future::pending::<()>().await;
        }
    }
    Ok(())
}
