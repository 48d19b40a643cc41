//! Scenario runner, overhead bench, corpus generator and report tool.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use loop_harness::bench::{overhead_bench, write_bench_csv, BenchParams, Variant};
use loop_harness::corpus::{generate_corpus, reference_model};
use loop_harness::csvio::{feature_rows, write_features, write_flows};
use loop_harness::report::{emit_report, render_summary, summarize_all};
use loop_harness::scenario::{run_scenario, ScenarioConfig};
use loop_harness::stack::Mode;
use nwdaf_loop::events::read_events;
use nwdaf_loop::mlprov::{ForestModel, TrainParams};

#[derive(Parser)]
#[command(about = "Closed-loop bot detection and mitigation experiments")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario for each collection interval.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated collection intervals in seconds.
        #[arg(long, value_delimiter = ',')]
        intervals: Vec<u32>,
        #[arg(long, value_enum, default_value_t = Mode::Inproc)]
        mode: Mode,
        /// Overrides the number of runs per interval.
        #[arg(long)]
        runs: Option<u32>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Measure ingest throughput and probe latency per EES variant.
    Bench {
        /// Comma-separated offered rates in Mbit/s of 125-byte descriptors.
        #[arg(long, value_delimiter = ',', default_value = "10,50,100")]
        rates: Vec<f64>,
        #[arg(long, value_enum, value_delimiter = ',')]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
    },
    /// Write the synthetic labelled flow corpus.
    TrainData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the per-node feature table.
        #[arg(long)]
        features_out: Option<PathBuf>,
    },
    /// Recompute breakdown and summary from an event log.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_model(cfg: &ScenarioConfig) -> Result<ForestModel> {
    match &cfg.model_path {
        Some(p) => Ok(serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => {
            eprintln!("training the reference model on the synthetic corpus (seed 1)");
            Ok(reference_model(1, &TrainParams::default())?)
        }
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    loop_harness::init_tracing();
    match Args::parse().cmd {
        Cmd::Run { config, intervals, mode, runs, out } => {
            let mut cfg = ScenarioConfig::load(&config)?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            let intervals = if !intervals.is_empty() {
                intervals
            } else {
                cfg.intervals.clone().unwrap_or_else(|| vec![cfg.collection_period_s])
            };
            let model = load_model(&cfg)?;
            let work = out.join("work");
            let report = run_scenario(&cfg, &intervals, mode, &model, &work, |r| {
                let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
                eprintln!(
                    "interval {}s run {}: t1={} t2={} t3={} benignFlagged={}",
                    r.interval,
                    r.run,
                    f(r.t1),
                    f(r.t2),
                    f(r.t3),
                    r.benign_flagged.len()
                );
            })
            .await?;
            let summary = emit_report(&out, &report.runs, &report.events)?;
            print!("{}", render_summary(&summary));
            if report.timeouts > 0 {
                eprintln!("{} run(s) timed out before the bot lost connectivity", report.timeouts);
            }
        }
        Cmd::Bench { rates, variants, seconds, out } => {
            let params = BenchParams {
                rates_mbps: rates,
                variants: if variants.is_empty() { Variant::ALL.to_vec() } else { variants },
                seconds,
                ..BenchParams::default()
            };
            let rows = overhead_bench(&params).await?;
            write_bench_csv(std::fs::File::create(&out)?, &rows)?;
            write_bench_csv(std::io::stdout(), &rows)?;
        }
        Cmd::TrainData { out, seed, features_out } => {
            let flows = generate_corpus(seed);
            write_flows(std::fs::File::create(&out)?, &flows)?;
            if let Some(p) = features_out {
                write_features(std::fs::File::create(&p)?, &feature_rows(&flows))?;
            }
            eprintln!("wrote {} flow records to {}", flows.len(), out.display());
        }
        Cmd::Report { input, out } => {
            let events = read_events(&input).with_context(|| format!("reading {}", input.display()))?;
            let runs = summarize_all(&events);
            let dir = out.unwrap_or_else(|| input.parent().map(PathBuf::from).unwrap_or_default());
            std::fs::create_dir_all(&dir)?;
            let summary = loop_harness::report::interval_summaries(&runs);
            loop_harness::report::write_breakdown_csv(std::fs::File::create(dir.join("breakdown.csv"))?, &runs)?;
            loop_harness::report::write_summary_csv(std::fs::File::create(dir.join("summary.csv"))?, &summary)?;
            print!("{}", render_summary(&summary));
        }
    }
    Ok(())
}
