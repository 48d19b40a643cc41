//! Abnormal-behaviour analytics: communication graph, node features and
//! classification of UE nodes through a provisioned model.

pub mod graph;

use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::time::{Duration, Instant};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{
    build_comm_graph, extract_features, node_degrees, weighted_betweenness, CommGraph, Degrees, GraphBuild,
    GraphError, NodeFeatures, FEATURE_SCHEMA,
};

use crate::ees::{rfc3339, ExceptionId, Timestamp};
use crate::mlprov::{InferenceRequest, InferenceResponse, ModelNotification, Prediction};
use crate::nwdaf::StoredUsageReport;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const INFERENCE_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    Benign,
    Anomalous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DetectionResult {
    pub ue_ipv4_addr: Ipv4Addr,
    pub label: Label,
    pub confidence: f64,
    pub excep_id: ExceptionId,
    #[serde(with = "rfc3339")]
    pub window_start: Timestamp,
    #[serde(with = "rfc3339")]
    pub window_end: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("no model has been provisioned")]
    NoModelAvailable,
    #[error("inference endpoint unreachable: {0}")]
    InferenceUnreachable(String),
    #[error("inference rejected: {0}")]
    InferenceRejected(String),
    #[error("model feature schema {0:?} does not match the engine")]
    SchemaMismatch(Vec<String>),
}

/// The model currently used for inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelBinding {
    pub name: String,
    pub version: u32,
    pub inference_uri: String,
}

impl TryFrom<&ModelNotification> for ModelBinding {
    type Error = EngineError;

    fn try_from(n: &ModelNotification) -> Result<Self, EngineError> {
        if n.feature_schema.iter().map(String::as_str).ne(FEATURE_SCHEMA) {
            return Err(EngineError::SchemaMismatch(n.feature_schema.clone()));
        }
        Ok(ModelBinding { name: n.model_name.clone(), version: n.model_version, inference_uri: n.inference_uri.clone() })
    }
}

/// Output of one analysis pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub results: Vec<DetectionResult>,
    pub model: Option<ModelBinding>,
    pub inference_time: Duration,
    pub missing_flow_info: usize,
}

/// UE feature rows in address order. UEs with no node in the graph are skipped.
pub fn ue_feature_rows(reports: &[StoredUsageReport], g: &CommGraph) -> Vec<(Ipv4Addr, NodeFeatures)> {
    let ues: BTreeSet<Ipv4Addr> = reports.iter().map(|r| r.notification.ue_ipv4_addr).collect();
    let feats = extract_features(g);
    ues.into_iter().filter_map(|ue| feats.get(&ue).map(|f| (ue, *f))).collect()
}

/// ANOMALOUS iff the anomalous vote share exceeds `threshold`.
pub fn label_for(p: &Prediction, threshold: f64) -> Label {
    if p.vote_share > threshold {
        Label::Anomalous
    } else {
        Label::Benign
    }
}

pub struct BotEngine {
    client: reqwest::Client,
    threshold: f64,
    model: RwLock<Option<ModelBinding>>,
}

impl BotEngine {
    pub fn new(threshold: f64) -> Self {
        BotEngine { client: crate::http::client(INFERENCE_TIMEOUT), threshold, model: RwLock::new(None) }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn bind_model(&self, m: ModelBinding) {
        *self.model.write() = Some(m);
    }

    pub fn model(&self) -> Option<ModelBinding> {
        self.model.read().clone()
    }

    /// Classifies every UE seen in `reports`; `window` only labels the results.
    pub async fn analyze_window(
        &self,
        reports: &[StoredUsageReport],
        window: (Timestamp, Timestamp),
    ) -> Result<Analysis, EngineError> {
        let model = self.model().ok_or(EngineError::NoModelAvailable)?;
        let build = build_comm_graph(reports);
        let rows = ue_feature_rows(reports, &build.graph);
        let mut out = Analysis {
            results: Vec::new(),
            model: Some(model.clone()),
            inference_time: Duration::ZERO,
            missing_flow_info: build.missing_flow_info,
        };
        if rows.is_empty() {
            return Ok(out);
        }
        let req = InferenceRequest { features: rows.iter().map(|(_, f)| f.to_vector().to_vec()).collect() };
        let started = Instant::now();
        let resp = self
            .client
            .post(&model.inference_uri)
            .json(&req)
            .send()
            .await
            .map_err(|e| EngineError::InferenceUnreachable(e.to_string()))?;
        if !resp.status().is_success() {
            let status = resp.status();
            let body = resp.text().await.unwrap_or_default();
            return Err(EngineError::InferenceRejected(format!("{status}: {body}")));
        }
        let resp: InferenceResponse =
            resp.json().await.map_err(|e| EngineError::InferenceRejected(e.to_string()))?;
        out.inference_time = started.elapsed();
        if resp.predictions.len() != rows.len() {
            return Err(EngineError::InferenceRejected(format!(
                "{} predictions for {} rows",
                resp.predictions.len(),
                rows.len()
            )));
        }
        out.model = Some(ModelBinding { version: resp.model_version, name: resp.model_name, ..model });
        out.results = rows
            .iter()
            .zip(&resp.predictions)
            .map(|((ue, _), p)| DetectionResult {
                ue_ipv4_addr: *ue,
                label: label_for(p, self.threshold),
                confidence: p.vote_share,
                excep_id: ExceptionId::SuspicionOfDdosAttack,
                window_start: window.0,
                window_end: window.1,
            })
            .collect();
        Ok(out)
    }
}
