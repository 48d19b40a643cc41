//! Labelled NetFlow-style CSV in, per-node feature rows out.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use nwdaf_loop::engine::{extract_features, CommGraph, NodeFeatures, FEATURE_SCHEMA};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("feature file lacks column {0}")]
    MissingColumn(String),
}

/// One unidirectional flow record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FlowRecord {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub packets: u64,
    pub bytes: u64,
    pub label: String,
}

/// `Some(1)` for bot traffic, `Some(0)` for normal traffic, `None` for
/// background or anything unrecognised. Accepts CTU-13 style labels such as
/// `flow=From-Botnet-V42-UDP-DNS`.
pub fn parse_label(raw: &str) -> Option<u8> {
    let l = raw.trim().to_ascii_lowercase();
    if l == "1" || l == "bot" || l.contains("botnet") {
        Some(1)
    } else if l == "0" || l == "benign" || l.contains("normal") {
        Some(0)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub node: Ipv4Addr,
    pub features: NodeFeatures,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, Default)]
pub struct FlowIngest {
    pub rows: Vec<FeatureRow>,
    pub malformed: usize,
}

impl FlowIngest {
    /// Rows that carry a label, in trainer form.
    pub fn labelled(&self) -> Vec<(Vec<f64>, u8)> {
        self.rows.iter().filter_map(|r| Some((r.features.to_vector().to_vec(), r.label?))).collect()
    }
}

/// Parses flow records, skipping and counting rows that do not parse.
pub fn read_flows(reader: impl Read) -> (Vec<FlowRecord>, usize) {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let mut flows = Vec::new();
    let mut malformed = 0;
    for rec in rdr.deserialize::<FlowRecord>() {
        match rec {
            Ok(f) => flows.push(f),
            Err(e) => {
                tracing::debug!("skipping malformed flow row: {e}");
                malformed += 1;
            }
        }
    }
    (flows, malformed)
}

/// One row per distinct source address. A node is labelled bot if any flow
/// it sources is bot-labelled, else normal if any is normal-labelled.
pub fn feature_rows(flows: &[FlowRecord]) -> Vec<FeatureRow> {
    let mut g = CommGraph::new();
    let mut labels: BTreeMap<Ipv4Addr, Option<u8>> = BTreeMap::new();
    for f in flows {
        g.add_edge(f.src_ip, f.dst_ip, f.packets);
        let slot = labels.entry(f.src_ip).or_default();
        *slot = match (*slot, parse_label(&f.label)) {
            (Some(1), _) | (_, Some(1)) => Some(1),
            (Some(0), _) | (_, Some(0)) => Some(0),
            _ => None,
        };
    }
    let feats = extract_features(&g);
    labels
        .into_iter()
        .map(|(node, label)| FeatureRow { node, features: feats.get(&node).copied().unwrap_or_default(), label })
        .collect()
}

pub fn ingest_flow_csv(path: impl AsRef<Path>) -> Result<FlowIngest, CsvError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CsvError::Io { path: path.display().to_string(), source })?;
    let (flows, malformed) = read_flows(std::io::BufReader::new(file));
    Ok(FlowIngest { rows: feature_rows(&flows), malformed })
}

pub fn write_flows(writer: impl Write, flows: &[FlowRecord]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(writer);
    for f in flows {
        w.serialize(f)?;
    }
    w.flush().map_err(|source| CsvError::Io { path: "<flows>".into(), source })?;
    Ok(())
}

/// Feature CSV: node, the five schema columns, label (empty when unlabelled).
pub fn write_features(writer: impl Write, rows: &[FeatureRow]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["node"];
    header.extend(FEATURE_SCHEMA);
    header.push("label");
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.node.to_string()];
        rec.extend(r.features.to_vector().iter().map(|v| format!("{v:?}")));
        rec.push(r.label.map(|l| l.to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| CsvError::Io { path: "<features>".into(), source })?;
    Ok(())
}

/// Reads labelled rows from a feature CSV, returning the schema, the rows
/// and the number of rows skipped (unlabelled or unparsable).
pub fn read_features(reader: impl Read) -> Result<(Vec<String>, Vec<(Vec<f64>, u8)>, usize), CsvError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_col = header.iter().position(|h| h == "label").ok_or_else(|| CsvError::MissingColumn("label".into()))?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&i| i != label_col && &header[i] != "node").collect();
    let schema = feature_cols.iter().map(|&i| header[i].to_string()).collect();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            skipped += 1;
            continue;
        };
        let label = rec.get(label_col).and_then(parse_label);
        let values: Option<Vec<f64>> = feature_cols.iter().map(|&i| rec.get(i)?.parse().ok()).collect();
        match (values, label) {
            (Some(v), Some(l)) => rows.push((v, l)),
            _ => skipped += 1,
        }
    }
    Ok((schema, rows, skipped))
}
