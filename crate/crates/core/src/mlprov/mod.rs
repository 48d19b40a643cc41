//! Random-forest models, the versioned registry that provisions them and
//! the inference endpoint used by analytics engines.

pub mod registry;
pub mod service;
pub mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ees::{AnalyticsEventId, Timestamp};

pub use registry::{MlSubscription, ModelNotice, Registry, RegistryError};
pub use train::{train_forest, TrainError, TrainOutcome, TrainParams};

pub const BENIGN: u8 = 0;
pub const ANOMALOUS: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelDescriptor {
    pub name: String,
    /// Assigned by the registry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    pub event_id: AnalyticsEventId,
    pub feature_schema: Vec<String>,
    /// Assigned by the registry.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "crate::ees::rfc3339::option")]
    pub created_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<BTreeMap<String, f64>>,
}

impl ModelDescriptor {
    /// String form of a descriptor field, for exact-match filters.
    pub fn field(&self, key: &str) -> Option<String> {
        match key {
            "name" => Some(self.name.clone()),
            "version" => self.version.map(|v| v.to_string()),
            "eventId" => Some(crate::ees::Token::token(self.event_id).to_string()),
            "featureSchema" => Some(self.feature_schema.join(",")),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    #[serde(rename_all = "camelCase")]
    Split { feature_index: usize, threshold: f64, left_child: usize, right_child: usize },
    #[serde(rename_all = "camelCase")]
    Leaf { class_label: u8 },
}

/// Nodes in pre-order; node 0 is the root and children always follow their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf(label: u8) -> Self {
        DecisionTree { nodes: vec![TreeNode::Leaf { class_label: label }] }
    }

    /// Routes `row` to a leaf; `feature <= threshold` goes left.
    pub fn predict(&self, row: &[f64]) -> u8 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { class_label } => return class_label,
                TreeNode::Split { feature_index, threshold, left_child, right_child } => {
                    i = if row[feature_index] <= threshold { left_child } else { right_child };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left_child, right_child, .. } => 1 + walk(t, left_child).max(walk(t, right_child)),
            }
        }
        walk(self, 0)
    }

    fn validate(&self, width: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                TreeNode::Leaf { class_label } if class_label > ANOMALOUS => {
                    return Err(format!("node {i}: class label {class_label} out of range"));
                }
                TreeNode::Leaf { .. } => {}
                TreeNode::Split { feature_index, threshold, left_child, right_child } => {
                    if feature_index >= width {
                        return Err(format!("node {i}: feature index {feature_index} >= {width}"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    for c in [left_child, right_child] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(format!("node {i}: child {c} out of bounds"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ForestModel {
    pub descriptor: ModelDescriptor,
    pub num_classes: u8,
    pub trees: Vec<DecisionTree>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("feature row {row} has width {got}, expected {expected}")]
    FeatureWidthMismatch { row: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Prediction {
    pub label: u8,
    pub vote_share: f64,
}

impl ForestModel {
    pub fn width(&self) -> usize {
        self.descriptor.feature_schema.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes != 2 {
            return Err(ModelError::SchemaViolation(format!("numClasses {} != 2", self.num_classes)));
        }
        if self.trees.is_empty() {
            return Err(ModelError::SchemaViolation("forest has no trees".into()));
        }
        if self.descriptor.name.is_empty() {
            return Err(ModelError::SchemaViolation("empty model name".into()));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            tree.validate(self.width()).map_err(|e| ModelError::SchemaViolation(format!("tree {t}: {e}")))?;
        }
        Ok(())
    }

    /// Majority vote per row; an even split resolves to BENIGN.
    pub fn infer(&self, rows: &[Vec<f64>]) -> Result<Vec<Prediction>, ModelError> {
        let width = self.width();
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(ModelError::FeatureWidthMismatch { row, got: r.len(), expected: width });
        }
        let trees = self.trees.len();
        Ok(rows
            .iter()
            .map(|r| {
                let votes = self.trees.iter().filter(|t| t.predict(r) == ANOMALOUS).count();
                Prediction {
                    label: if 2 * votes > trees { ANOMALOUS } else { BENIGN },
                    vote_share: votes as f64 / trees as f64,
                }
            })
            .collect())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("model serializes")
    }
}

// ---- wire types ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InferenceRequest {
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InferenceResponse {
    pub model_name: String,
    pub model_version: u32,
    pub predictions: Vec<Prediction>,
}

/// Tells a subscriber where the latest matching model is served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelNotification {
    pub subscription_id: String,
    pub model_name: String,
    pub model_version: u32,
    pub inference_uri: String,
    pub feature_schema: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MlSubscriptionResponse {
    pub subscription_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<ModelNotification>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn descriptor(width: usize) -> ModelDescriptor {
        ModelDescriptor {
            name: "m".into(),
            version: Some(1),
            event_id: AnalyticsEventId::AbnormalBehaviour,
            feature_schema: (0..width).map(|i| format!("f{i}")).collect(),
            created_at: None,
            metrics: None,
        }
    }

    fn split(f: usize, t: f64, l: usize, r: usize) -> TreeNode {
        TreeNode::Split { feature_index: f, threshold: t, left_child: l, right_child: r }
    }

    fn leaf(c: u8) -> TreeNode {
        TreeNode::Leaf { class_label: c }
    }

    #[test]
    fn two_level_tree_matches_manual_tracing() {
        // x0 <= 1 ? (x1 <= 5 ? 0 : 1) : (x1 <= 2 ? 1 : 0)
        let tree = DecisionTree { nodes: vec![split(0, 1.0, 1, 4), split(1, 5.0, 2, 3), leaf(0), leaf(1), split(1, 2.0, 5, 6), leaf(1), leaf(0)] };
        assert_eq!(tree.predict(&[0.0, 5.0]), 0);
        assert_eq!(tree.predict(&[1.0, 6.0]), 1);
        assert_eq!(tree.predict(&[2.0, 2.0]), 1);
        assert_eq!(tree.predict(&[2.0, 3.0]), 0);
        assert_eq!(tree.depth(), 2);
    }

    #[test]
    fn majority_vote_and_tie_to_benign() {
        let mut f = ForestModel { descriptor: descriptor(1), num_classes: 2, trees: vec![DecisionTree::leaf(1), DecisionTree::leaf(1), DecisionTree::leaf(0)] };
        let p = f.infer(&[vec![0.0]]).unwrap();
        assert_eq!(p[0].label, ANOMALOUS);
        assert!((p[0].vote_share - 2.0 / 3.0).abs() < 1e-15);
        f.trees.pop();
        f.trees.push(DecisionTree::leaf(0));
        f.trees.push(DecisionTree::leaf(0));
        f.trees[1] = DecisionTree::leaf(1);
        // [1,1,0,0]
        let p = f.infer(&[vec![0.0]]).unwrap();
        assert_eq!((p[0].label, p[0].vote_share), (BENIGN, 0.5));
        assert!(f.infer(&[]).unwrap().is_empty());
    }

    #[test]
    fn width_mismatch_and_schema_checks() {
        let f = ForestModel { descriptor: descriptor(2), num_classes: 2, trees: vec![DecisionTree::leaf(0)] };
        assert!(matches!(f.infer(&[vec![1.0]]), Err(ModelError::FeatureWidthMismatch { row: 0, got: 1, expected: 2 })));
        let bad = ForestModel {
            trees: vec![DecisionTree { nodes: vec![split(2, 0.0, 1, 2), leaf(0), leaf(1)] }],
            ..f.clone()
        };
        assert!(matches!(bad.validate(), Err(ModelError::SchemaViolation(_))));
        let cyclic = ForestModel { trees: vec![DecisionTree { nodes: vec![split(0, 0.0, 0, 1), leaf(0)] }], ..f };
        assert!(cyclic.validate().is_err());
    }

    #[test]
    fn model_json_round_trips() {
        let f = ForestModel {
            descriptor: descriptor(2),
            num_classes: 2,
            trees: vec![DecisionTree { nodes: vec![split(1, 0.5, 1, 2), leaf(0), leaf(1)] }],
        };
        let back: ForestModel = serde_json::from_slice(&f.to_json()).unwrap();
        assert_eq!(back, f);
    }
}
