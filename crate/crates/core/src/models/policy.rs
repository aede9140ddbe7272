use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::expect_kind;
use crate::data::Impression;
use crate::error::{Error, Result};
use crate::eval::position_proxy_grade;
use crate::gbdt::{fit_gbdt, GbdtModel, GbdtParams, Objective, RankingDataset};
use crate::nn::checkpoint::{Checkpoint, CheckpointBuilder, MAGIC};
use crate::nn::{adam_step, backward, AdamConfig, AdamState, Batch, DenseNet, Loss};
use crate::seed::rng_for;

/// What the GBDT estimator learns to predict from a logged position `k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTarget {
    /// LambdaRank on the graded proxy `max(0, 5 - k)`.
    #[default]
    LambdaRank,
    /// Pointwise squared error on `1 / k`.
    ReciprocalRank,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyGbdtConfig {
    pub target: PolicyTarget,
    pub params: GbdtParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralPolicyConfig {
    pub epochs: usize,
    /// Rows per batch; whole queries are packed until this is reached.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    /// Sharpness `c` of the attention target `softmax(c / k)`.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for NeuralPolicyConfig {
    fn default() -> Self {
        NeuralPolicyConfig {
            epochs: 3,
            batch_size: 512,
            learning_rate: 0.01,
            hidden: vec![256, 256],
            temperature: 10.0,
            seed: 0,
        }
    }
}

impl NeuralPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::validation(
                "neural policy needs positive epochs, batch size and at least one hidden layer",
            ));
        }
        if !(self.learning_rate > 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation("invalid neural policy learning rate or temperature"));
        }
        Ok(())
    }
}

/// A scoring function that imitates the logging policy's ordering.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyEstimator {
    Gbdt(GbdtModel),
    Neural(DenseNet),
}

impl PolicyEstimator {
    pub fn score_batch(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match self {
            PolicyEstimator::Gbdt(m) => {
                if features.ncols() != m.dim {
                    return Err(Error::validation(format!(
                        "estimator expects {} features, got {}",
                        m.dim,
                        features.ncols()
                    )));
                }
                Ok(features.rows().into_iter().map(|r| m.predict_row(r)).collect())
            }
            PolicyEstimator::Neural(net) => Ok(net.forward_batch(features)?.column(0).to_vec()),
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.score_batch(view)?[0])
    }

    /// Width of the last hidden layer; only neural estimators have one.
    pub fn embedding_dim(&self) -> Option<usize> {
        match self {
            PolicyEstimator::Gbdt(_) => None,
            PolicyEstimator::Neural(net) => Some(net.embedding_dim()),
        }
    }

    pub fn embed_batch(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        match self {
            PolicyEstimator::Gbdt(_) => Err(Error::validation(
                "tree ensembles have no embedding; use a neural policy estimator",
            )),
            PolicyEstimator::Neural(net) => net.embed_batch(features),
        }
    }

    pub fn embedding(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.embed_batch(view)?.row(0).to_vec())
    }

    /// GBDT estimators serialize to JSON, neural ones to the binary
    /// checkpoint format.
    pub fn to_bytes(&self, meta: serde_json::Value) -> Result<Vec<u8>> {
        match self {
            PolicyEstimator::Gbdt(m) => Ok(m.to_json()?.into_bytes()),
            PolicyEstimator::Neural(net) => CheckpointBuilder::new("policy_neural", meta)
                .net("policy", net)
                .finish()
                .to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(MAGIC) {
            let ckpt = Checkpoint::from_bytes(bytes)?;
            expect_kind(&ckpt, "policy_neural")?;
            Ok(PolicyEstimator::Neural(ckpt.net("policy")?))
        } else {
            let text = std::str::from_utf8(bytes)
                .map_err(|_| Error::Checkpoint("estimator file is neither JSON nor a checkpoint".into()))?;
            Ok(PolicyEstimator::Gbdt(GbdtModel::from_json(text)?))
        }
    }
}

/// One row per displayed document, one group per impression, with the
/// logged position turned into a regression or ranking target.
///
/// Rows inside each group are ordered by doc id. Logs are usually stored in
/// displayed order, and the trees break score ties by row index, so keeping
/// that order would let a constant model "predict" the logged ranking.
pub fn impressions_to_ranking_dataset(impressions: &[Impression], target: PolicyTarget) -> Result<RankingDataset> {
    let by_doc: Vec<Impression> = impressions
        .iter()
        .map(|imp| {
            let mut imp = imp.clone();
            imp.entries.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            imp
        })
        .collect();
    let rows = super::ClickRows::from_impressions(&by_doc)?;
    let targets = rows
        .positions
        .iter()
        .map(|&k| match target {
            PolicyTarget::LambdaRank => f64::from(position_proxy_grade(k)),
            PolicyTarget::ReciprocalRank => 1.0 / k as f64,
        })
        .collect();
    RankingDataset::new(rows.features, targets, rows.groups)
}

/// Fits a tree ensemble that reproduces the logged order; `validation`
/// drives early stopping when non-empty.
pub fn estimate_logging_policy_gbdt(
    train: &[Impression],
    validation: &[Impression],
    cfg: &PolicyGbdtConfig,
) -> Result<PolicyEstimator> {
    let objective = match cfg.target {
        PolicyTarget::LambdaRank => Objective::lambdarank(),
        PolicyTarget::ReciprocalRank => Objective::PointwiseSquaredError,
    };
    let train = impressions_to_ranking_dataset(train, cfg.target)?;
    let validation = impressions_to_ranking_dataset(validation, cfg.target)?;
    let model = fit_gbdt(&train, Some(&validation), objective, &cfg.params)?;
    Ok(PolicyEstimator::Gbdt(model))
}

/// Listwise attention targets: per impression, `softmax(c / k)`.
fn attention_targets(positions: &[usize], c: f64) -> Vec<f64> {
    let logits: Vec<f64> = positions.iter().map(|&k| c / k as f64).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Trains a feed-forward scorer with listwise softmax cross-entropy against
/// `softmax(c / k)` over each impression. Its last hidden layer is the
/// embedding used by the backdoor adjustment.
pub fn estimate_logging_policy_neural(
    train: &[Impression],
    cfg: &NeuralPolicyConfig,
) -> Result<PolicyEstimator> {
    cfg.validate()?;
    let rows = super::ClickRows::from_impressions(train)?;
    if rows.is_empty() {
        return Err(Error::validation("no impressions to estimate the policy from"));
    }
    let targets: Vec<f64> = rows
        .groups
        .iter()
        .flat_map(|g| attention_targets(&rows.positions[g.clone()], cfg.temperature))
        .collect();
    let mut dims = vec![rows.dim()];
    dims.extend(&cfg.hidden);
    dims.push(1);
    let mut net = DenseNet::glorot(&dims, &mut rng_for(cfg.seed, "init"))?;
    let mut state = AdamState::new(
        net.param_count(),
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = rng_for(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..rows.groups.len()).collect();
    let mut batch_index = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut pos = 0;
        while pos < order.len() {
            let mut idx = Vec::new();
            let mut groups = Vec::new();
            while pos < order.len() && idx.len() < cfg.batch_size {
                let g = rows.groups[order[pos]].clone();
                groups.push(idx.len()..idx.len() + g.len());
                idx.extend(g);
                pos += 1;
            }
            let batch = Batch {
                inputs: rows.features.select(Axis(0), &idx),
                targets: idx.iter().map(|&r| targets[r]).collect(),
                groups,
            };
            let (grads, _) = backward(&net, &batch, Loss::ListwiseSoftmax).map_err(|e| e.at_batch(batch_index))?;
            adam_step(&mut net, &grads, &mut state).map_err(|e| e.at_batch(batch_index))?;
            batch_index += 1;
        }
    }
    Ok(PolicyEstimator::Neural(net))
}
