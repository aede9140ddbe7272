//! Click models and logging-policy estimators.
//!
//! Every click model here is additive in logit space:
//! `click_logit(x, k) = relevance(x) + bias(k)`. The relevance tower sees
//! only document features and the bias tower sees only the display
//! position, so ranking by the relevance tower alone removes the position
//! effect learned by the bias tower.

mod backdoor;
mod policy;
mod two_tower;

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedExample, Impression};
use crate::error::{Error, Result};
use crate::eval::rank_by_scores;
use crate::nn::checkpoint::{Checkpoint, CheckpointBuilder};
use crate::nn::DenseNet;

pub use backdoor::{
    empirical_ctr_logits, train_backdoor_variant, BackdoorArtifacts, BackdoorConfig, BackdoorHead,
    ExamLogitSource,
};
pub use policy::{
    estimate_logging_policy_gbdt, estimate_logging_policy_neural, impressions_to_ranking_dataset,
    NeuralPolicyConfig, PolicyEstimator, PolicyGbdtConfig, PolicyTarget,
};
pub use two_tower::{train_naive, train_two_tower};

/// Deepest position with its own bias weight; deeper positions share it.
pub const DEFAULT_MAX_POSITION: usize = 10;

/// Optimization settings shared by every neural click model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hidden widths of the relevance tower.
    pub hidden: Vec<usize>,
    pub max_position: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 512,
            learning_rate: 0.01,
            hidden: vec![256, 256],
            max_position: DEFAULT_MAX_POSITION,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_position == 0 {
            return Err(Error::validation(
                "epochs, batch_size and max_position must be positive",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::validation("hidden widths must be positive"));
        }
        Ok(())
    }

    pub(crate) fn tower_dims(&self, input: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(1);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Standard,
    /// Inverted dropout with rate `tau` on the bias-tower output.
    Dropout {
        tau: f64,
    },
    /// Bias tower fixed to the marginalized output of a backdoor head.
    Backdoor,
}

impl Variant {
    pub fn tag(&self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Dropout { .. } => "dropout",
            Variant::Backdoor => "backdoor",
        }
    }
}

/// Linear layer over a one-hot position: `bias(k) = weights[k-1] + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTower {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl BiasTower {
    pub fn zeros(max_position: usize) -> Self {
        BiasTower {
            weights: vec![0.0; max_position],
            offset: 0.0,
        }
    }

    pub fn max_position(&self) -> usize {
        self.weights.len()
    }

    /// One-hot slot of a 1-based position, clamping deep positions.
    pub fn slot(&self, position: usize) -> usize {
        position.clamp(1, self.weights.len()) - 1
    }

    pub fn logit(&self, position: usize) -> f64 {
        self.weights[self.slot(position)] + self.offset
    }

    /// `bias(k)` for `k = 1..=max_position`.
    pub fn logits(&self) -> Vec<f64> {
        (1..=self.max_position()).map(|k| self.logit(k)).collect()
    }
}

/// Relevance-only scoring shared by every click model.
pub trait RelevanceModel {
    fn relevance_tower(&self) -> &DenseNet;

    fn relevance_scores(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self
            .relevance_tower()
            .forward_batch(features)?
            .column(0)
            .to_vec())
    }

    fn relevance(&self, x: &[f64]) -> Result<f64> {
        Ok(self.relevance_tower().forward(x)?[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerModel {
    pub relevance: DenseNet,
    pub bias: BiasTower,
    pub variant: Variant,
}

impl RelevanceModel for TwoTowerModel {
    fn relevance_tower(&self) -> &DenseNet {
        &self.relevance
    }
}

impl TwoTowerModel {
    /// Zero-initialized towers.
    pub fn zeros(dims: &[usize], max_position: usize, variant: Variant) -> Result<Self> {
        Ok(TwoTowerModel {
            relevance: DenseNet::zeros(dims)?,
            bias: BiasTower::zeros(max_position),
            variant,
        })
    }

    pub fn bias_logit(&self, position: usize) -> f64 {
        self.bias.logit(position)
    }

    /// `relevance(x) + bias(k)`. Dropout is a training-time operation and
    /// never applies here.
    pub fn click_logit(&self, x: &[f64], position: usize) -> Result<f64> {
        Ok(self.relevance(x)? + self.bias_logit(position))
    }

    pub fn click_probability(&self, x: &[f64], position: usize) -> Result<f64> {
        Ok(crate::nn::sigmoid(self.click_logit(x, position)?))
    }

    pub fn to_checkpoint(&self, mut meta: serde_json::Value) -> Checkpoint {
        if let Some(obj) = meta.as_object_mut() {
            obj.insert(
                "variant".into(),
                serde_json::to_value(self.variant).expect("variant serializes"),
            );
        }
        CheckpointBuilder::new("two_tower", meta)
            .net("relevance", &self.relevance)
            .vector("bias_weights", &self.bias.weights)
            .vector("bias_offset", &[self.bias.offset])
            .finish()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, "two_tower")?;
        let variant = serde_json::from_value(ckpt.header.meta["variant"].clone())
            .map_err(|e| Error::Checkpoint(format!("variant tag: {e}")))?;
        let weights = ckpt.vector("bias_weights")?;
        if weights.is_empty() {
            return Err(Error::Checkpoint("empty bias tower".into()));
        }
        Ok(TwoTowerModel {
            relevance: ckpt.net("relevance")?,
            bias: BiasTower {
                weights,
                offset: ckpt.vector("bias_offset")?[0],
            },
            variant,
        })
    }
}

/// A relevance tower trained on clicks without any position input.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveModel {
    pub relevance: DenseNet,
}

impl RelevanceModel for NaiveModel {
    fn relevance_tower(&self) -> &DenseNet {
        &self.relevance
    }
}

impl NaiveModel {
    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        CheckpointBuilder::new("naive", meta)
            .net("relevance", &self.relevance)
            .finish()
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_kind(ckpt, "naive")?;
        Ok(NaiveModel {
            relevance: ckpt.net("relevance")?,
        })
    }
}

pub(crate) fn expect_kind(ckpt: &Checkpoint, kind: &str) -> Result<()> {
    if ckpt.header.kind != kind {
        return Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            ckpt.header.kind
        )));
    }
    Ok(())
}

/// Loss after each epoch on one data split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

/// A trained model with its loss curve.
#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    pub curve: Vec<CurvePoint>,
}

/// Impressions flattened into one row per displayed document.
#[derive(Debug, Clone)]
pub struct ClickRows {
    pub features: Array2<f64>,
    pub positions: Vec<usize>,
    pub clicks: Vec<f64>,
    /// Rows of each impression.
    pub groups: Vec<Range<usize>>,
}

impl ClickRows {
    pub fn from_impressions(impressions: &[Impression]) -> Result<Self> {
        let n: usize = impressions.iter().map(|i| i.entries.len()).sum();
        let dim = impressions
            .iter()
            .flat_map(|i| i.entries.first())
            .map(|e| e.features.dim())
            .next()
            .unwrap_or(0);
        let mut flat = Vec::with_capacity(n * dim);
        let mut positions = Vec::with_capacity(n);
        let mut clicks = Vec::with_capacity(n);
        let mut groups = Vec::with_capacity(impressions.len());
        for imp in impressions {
            let start = positions.len();
            for e in &imp.entries {
                if e.features.dim() != dim {
                    return Err(Error::validation(format!(
                        "query {}: feature width {} differs from {dim}",
                        imp.query_id,
                        e.features.dim()
                    )));
                }
                flat.extend_from_slice(e.features.as_slice());
                positions.push(e.position);
                clicks.push(if e.clicked { 1.0 } else { 0.0 });
            }
            groups.push(start..positions.len());
        }
        Ok(ClickRows {
            features: Array2::from_shape_vec((n, dim), flat).expect("rows of equal width"),
            positions,
            clicks,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Document ids of one query, best first by relevance-tower score. Ties go
/// to the smaller doc id; positions are never consulted.
pub fn rank_by_relevance<M: RelevanceModel + ?Sized>(
    model: &M,
    docs: &[AnnotatedExample],
) -> Result<Vec<String>> {
    let dim = model.relevance_tower().input_dim();
    let mut flat = Vec::with_capacity(docs.len() * dim);
    for d in docs {
        if d.features.dim() != dim {
            return Err(Error::validation(format!(
                "document {} has {} features, model expects {dim}",
                d.doc_id,
                d.features.dim()
            )));
        }
        flat.extend_from_slice(d.features.as_slice());
    }
    let x = Array2::from_shape_vec((docs.len(), dim), flat).expect("rows of equal width");
    let scores = model.relevance_scores(x.view())?;
    let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    Ok(rank_by_scores(&scores, &ids)
        .into_iter()
        .map(|i| docs[i].doc_id.clone())
        .collect())
}

/// Stacks annotation features into a matrix.
pub fn annotation_matrix(docs: &[AnnotatedExample]) -> Result<Array2<f64>> {
    let dim = docs.first().map_or(0, |d| d.features.dim());
    let mut flat = Vec::with_capacity(docs.len() * dim);
    for d in docs {
        if d.features.dim() != dim {
            return Err(Error::validation("annotations differ in feature width"));
        }
        flat.extend_from_slice(d.features.as_slice());
    }
    Ok(Array2::from_shape_vec((docs.len(), dim), flat).expect("rows of equal width"))
}
