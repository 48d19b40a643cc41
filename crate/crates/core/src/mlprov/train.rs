//! CART random-forest trainer: bootstrap samples, random feature subsets
//! per split, Gini impurity, midpoint thresholds.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{DecisionTree, ForestModel, ModelDescriptor, TreeNode, ANOMALOUS, BENIGN};
use crate::ees::AnalyticsEventId;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    /// Features drawn per split; `None` means ceil(sqrt(width)).
    pub features_per_split: Option<usize>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams { num_trees: 100, max_depth: 10, seed: 1, features_per_split: None }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    Empty,
    #[error("row {0} has a different width")]
    RaggedRows(usize),
    #[error("feature schema has {schema} names but rows have {width} columns")]
    SchemaWidth { schema: usize, width: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("numTrees must be positive")]
    NoTrees,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ForestModel,
    /// Set when only one class was present and a constant predictor was produced.
    pub degenerate: bool,
}

/// Trains a forest on `(features, label)` rows. The descriptor carries no
/// version or creation time so output is a pure function of the inputs.
pub fn train_forest(
    name: &str,
    schema: &[&str],
    rows: &[(Vec<f64>, u8)],
    params: &TrainParams,
) -> Result<TrainOutcome, TrainError> {
    let width = rows.first().ok_or(TrainError::Empty)?.0.len();
    if let Some(i) = rows.iter().position(|(r, _)| r.len() != width) {
        return Err(TrainError::RaggedRows(i));
    }
    if schema.len() != width {
        return Err(TrainError::SchemaWidth { schema: schema.len(), width });
    }
    if let Some((_, l)) = rows.iter().find(|(_, l)| *l > ANOMALOUS) {
        return Err(TrainError::BadLabel(*l));
    }
    if params.num_trees == 0 {
        return Err(TrainError::NoTrees);
    }

    let positives = rows.iter().filter(|(_, l)| *l == ANOMALOUS).count();
    let degenerate = positives == 0 || positives == rows.len();
    let trees = if degenerate {
        let label = if positives == 0 { BENIGN } else { ANOMALOUS };
        tracing::warn!("single-class dataset; producing a constant predictor");
        vec![DecisionTree::leaf(label)]
    } else {
        let per_split = params
            .features_per_split
            .unwrap_or_else(|| (width as f64).sqrt().ceil() as usize)
            .clamp(1, width);
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        (0..params.num_trees)
            .map(|_| {
                let boot: Vec<usize> = (0..rows.len()).map(|_| rng.gen_range(0..rows.len())).collect();
                let mut b = Builder { rows, per_split, max_depth: params.max_depth, nodes: Vec::new(), rng: &mut rng };
                b.grow(boot, 0);
                DecisionTree { nodes: b.nodes }
            })
            .collect()
    };

    let mut model = ForestModel {
        descriptor: ModelDescriptor {
            name: name.to_string(),
            version: None,
            event_id: AnalyticsEventId::AbnormalBehaviour,
            feature_schema: schema.iter().map(|s| s.to_string()).collect(),
            created_at: None,
            metrics: None,
        },
        num_classes: 2,
        trees,
    };
    let acc = accuracy(&model, rows);
    model.descriptor.metrics = Some(BTreeMap::from([("trainAccuracy".to_string(), acc)]));
    Ok(TrainOutcome { model, degenerate })
}

/// Fraction of rows the model labels correctly.
pub fn accuracy(model: &ForestModel, rows: &[(Vec<f64>, u8)]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let x: Vec<Vec<f64>> = rows.iter().map(|(r, _)| r.clone()).collect();
    let pred = model.infer(&x).expect("rows match the schema width");
    let hits = pred.iter().zip(rows).filter(|(p, (_, l))| p.label == *l).count();
    hits as f64 / rows.len() as f64
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    rows: &'a [(Vec<f64>, u8)],
    per_split: usize,
    max_depth: usize,
    nodes: Vec<TreeNode>,
    rng: &'a mut ChaCha8Rng,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn label(&self, i: usize) -> u8 {
        self.rows[i].1
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let pos = idx.iter().filter(|&&i| self.label(i) == ANOMALOUS).count();
        let me = self.nodes.len();
        let majority = if 2 * pos > idx.len() { ANOMALOUS } else { BENIGN };
        self.nodes.push(TreeNode::Leaf { class_label: majority });
        if depth >= self.max_depth || pos == 0 || pos == idx.len() {
            return me;
        }
        let Some(split) = self.best_split(&idx, pos) else {
            return me;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.rows[i].0[split.feature] <= split.threshold);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[me] = TreeNode::Split { feature_index: split.feature, threshold: split.threshold, left_child: l, right_child: r };
        me
    }

    fn best_split(&mut self, idx: &[usize], pos: usize) -> Option<Split> {
        let width = self.rows[0].0.len();
        let n = idx.len();
        let parent = gini(pos, n);
        let mut features = sample(self.rng, width, self.per_split).into_vec();
        features.sort_unstable();
        let mut best: Option<Split> = None;
        let mut sorted: Vec<(f64, u8)> = Vec::with_capacity(n);
        for f in features {
            sorted.clear();
            sorted.extend(idx.iter().map(|&i| (self.rows[i].0[f], self.label(i))));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(sorted[k - 1].1 == ANOMALOUS);
                let (lo, hi) = (sorted[k - 1].0, sorted[k].0);
                if lo == hi {
                    continue;
                }
                let impurity = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(pos - left_pos, n - k)) / n as f64;
                if impurity < parent && best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split { feature: f, threshold, impurity });
                }
            }
        }
        best
    }
}
