//! Backdoor adjustment of the bias tower.
//!
//! 1. A neural policy estimator supplies a frozen document embedding that
//!    approximates what the logging policy saw.
//! 2. A linear head over `[embedding(x) ; one_hot(k)]` regresses per-position
//!    biased examination logits.
//! 3. The head's output, with the embedding term averaged over the training
//!    rows, becomes a fixed bias tower while the relevance tower is fit.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::two_tower::{fit_click_model, init_tower, prepare, BiasMode};
use super::{BiasTower, ClickRows, PolicyEstimator, Trained, TrainConfig, TwoTowerModel, Variant};
use crate::data::Impression;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{Checkpoint, CheckpointBuilder};
use crate::nn::{adam_step, backward, AdamConfig, AdamState, Batch, DenseNet, DropoutSpec, Loss};
use crate::seed::rng_for;

/// Where the examination logits regressed by the head come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExamLogitSource {
    /// Bias-tower logits of a standard two-tower model fit on the same clicks.
    #[default]
    TwoTower,
    /// `logit(CTR)` at each position.
    EmpiricalCtr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackdoorConfig {
    /// Feed the position one-hot to the head next to the embedding.
    pub position_input: bool,
    pub exam_logit_source: ExamLogitSource,
    pub head_epochs: usize,
    pub head_learning_rate: f64,
}

impl Default for BackdoorConfig {
    fn default() -> Self {
        BackdoorConfig {
            position_input: true,
            exam_logit_source: ExamLogitSource::TwoTower,
            head_epochs: 10,
            head_learning_rate: 0.01,
        }
    }
}

/// `head(e, k) = embed_weights · e + position_weights[k] + offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackdoorHead {
    pub embed_weights: Vec<f64>,
    /// Empty when the head does not see positions.
    pub position_weights: Vec<f64>,
    pub offset: f64,
}

impl BackdoorHead {
    pub fn predict(&self, embedding: &[f64], position: usize) -> f64 {
        let e: f64 = self.embed_weights.iter().zip(embedding).map(|(w, v)| w * v).sum();
        let p = if self.position_weights.is_empty() {
            0.0
        } else {
            self.position_weights[position.clamp(1, self.position_weights.len()) - 1]
        };
        e + p + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackdoorArtifacts {
    pub policy_net: DenseNet,
    pub head: BackdoorHead,
    pub mean_embedding: Vec<f64>,
    pub biased_exam_logits: Vec<f64>,
}

impl BackdoorArtifacts {
    /// Two-tower checkpoint extended with the head, the marginalizing
    /// embedding and the regressed logits. The frozen policy network is
    /// referenced through `meta`, not copied.
    pub fn checkpoint(&self, model: &TwoTowerModel, meta: serde_json::Value) -> Checkpoint {
        let meta = model.to_checkpoint(meta).header.meta;
        CheckpointBuilder::new("two_tower", meta)
            .net("relevance", &model.relevance)
            .vector("bias_weights", &model.bias.weights)
            .vector("bias_offset", &[model.bias.offset])
            .vector("biased_exam_logits", &self.biased_exam_logits)
            .vector("mean_embedding", &self.mean_embedding)
            .vector("head_embed_weights", &self.head.embed_weights)
            .vector("head_position_weights", &self.head.position_weights)
            .vector("head_offset", &[self.head.offset])
            .finish()
    }
}

/// Per-position `logit(clicks / impressions)`, clamped away from 0 and 1.
pub fn empirical_ctr_logits(impressions: &[Impression], max_position: usize) -> Result<Vec<f64>> {
    let mut shown = vec![0usize; max_position];
    let mut clicked = vec![0usize; max_position];
    for e in impressions.iter().flat_map(|i| &i.entries) {
        let slot = e.position.clamp(1, max_position) - 1;
        shown[slot] += 1;
        clicked[slot] += usize::from(e.clicked);
    }
    shown
        .iter()
        .zip(&clicked)
        .enumerate()
        .map(|(slot, (&n, &c))| {
            if n == 0 {
                return Err(Error::validation(format!("no impressions at position {}", slot + 1)));
            }
            let p = (c as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
            Ok((p / (1.0 - p)).ln())
        })
        .collect()
}

fn head_inputs(embedding: ArrayView2<'_, f64>, positions: &[usize], slots: usize) -> Array2<f64> {
    let mut x = Array2::zeros((embedding.nrows(), embedding.ncols() + slots));
    x.slice_mut(s![.., ..embedding.ncols()]).assign(&embedding);
    if slots > 0 {
        for (i, &k) in positions.iter().enumerate() {
            x[[i, embedding.ncols() + k.clamp(1, slots) - 1]] = 1.0;
        }
    }
    x
}

fn param_bits(net: &DenseNet) -> Vec<u64> {
    net.flat_params().iter().map(|v| v.to_bits()).collect()
}

/// Overall mean embedding, then one per position slot (None when unseen).
type EmbeddingMeans = (Vec<f64>, Vec<Option<Vec<f64>>>);

/// Embedding sums over all rows and per position slot.
fn embedding_means(
    policy: &PolicyEstimator,
    rows: &ClickRows,
    slots: usize,
) -> Result<EmbeddingMeans> {
    let width = policy.embedding_dim().expect("checked neural");
    let mut total = vec![0.0; width];
    let mut per_slot = vec![vec![0.0; width]; slots];
    let mut counts = vec![0usize; slots];
    for start in (0..rows.len()).step_by(4096) {
        let end = (start + 4096).min(rows.len());
        let e = policy.embed_batch(rows.features.slice(s![start..end, ..]))?;
        for (i, row) in e.rows().into_iter().enumerate() {
            let slot = rows.positions[start + i].clamp(1, slots) - 1;
            counts[slot] += 1;
            for (j, v) in row.iter().enumerate() {
                total[j] += v;
                per_slot[slot][j] += v;
            }
        }
    }
    let n = rows.len() as f64;
    let mean = total.into_iter().map(|v| v / n).collect();
    let slot_means = per_slot
        .into_iter()
        .zip(counts)
        .map(|(sum, c)| (c > 0).then(|| sum.into_iter().map(|v| v / c as f64).collect()))
        .collect();
    Ok((mean, slot_means))
}

/// Runs the regression head and the relevance fit of the backdoor variant.
///
/// With `position_input` the adjusted bias is
/// `bias(k) = position_weights[k] + offset + embed_weights · ē`, where `ē`
/// is the mean training embedding. Without it the head has no position term
/// and `bias(k) = embed_weights · ē_k + offset`, with `ē_k` the mean
/// embedding of rows shown at `k`.
pub fn train_backdoor_variant(
    train: &[Impression],
    validation: &[Impression],
    policy: &PolicyEstimator,
    biased_exam_logits: &[f64],
    cfg: &TrainConfig,
    backdoor: &BackdoorConfig,
) -> Result<(Trained<TwoTowerModel>, BackdoorArtifacts)> {
    let PolicyEstimator::Neural(policy_net) = policy else {
        return Err(Error::validation(
            "the backdoor adjustment needs a neural policy estimator for its embedding",
        ));
    };
    if biased_exam_logits.len() != cfg.max_position {
        return Err(Error::validation(format!(
            "{} biased examination logits for {} positions",
            biased_exam_logits.len(),
            cfg.max_position
        )));
    }
    if biased_exam_logits.iter().any(|v| !v.is_finite()) || backdoor.head_epochs == 0 {
        return Err(Error::validation("invalid backdoor head inputs"));
    }
    let (rows, val) = prepare(train, validation, cfg)?;
    if policy_net.input_dim() != rows.dim() {
        return Err(Error::validation("policy estimator and clicks differ in feature width"));
    }
    let frozen = param_bits(policy_net);

    let slots = if backdoor.position_input { cfg.max_position } else { 0 };
    let width = policy_net.embedding_dim();
    let mut head = DenseNet::zeros(&[width + slots, 1])?;
    let mut state = AdamState::new(
        head.param_count(),
        AdamConfig {
            learning_rate: backdoor.head_learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut rng = rng_for(cfg.seed, "backdoor_head");
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut batch_index = 0;
    for _ in 0..backdoor.head_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let x = rows.features.select(Axis(0), idx);
            let positions: Vec<usize> = idx.iter().map(|&r| rows.positions[r]).collect();
            let e = policy_net.embed_batch(x.view())?;
            let batch = Batch::pointwise(
                head_inputs(e.view(), &positions, slots),
                positions
                    .iter()
                    .map(|&k| biased_exam_logits[k.clamp(1, cfg.max_position) - 1])
                    .collect(),
            );
            let (grads, _) = backward(&head, &batch, Loss::SquaredError).map_err(|e| e.at_batch(batch_index))?;
            adam_step(&mut head, &grads, &mut state).map_err(|e| e.at_batch(batch_index))?;
            batch_index += 1;
        }
    }
    let w = head.layers()[0].weights.row(0).to_vec();
    let head = BackdoorHead {
        embed_weights: w[..width].to_vec(),
        position_weights: w[width..].to_vec(),
        offset: head.layers()[0].bias[0],
    };

    let (mean_embedding, slot_means) = embedding_means(policy, &rows, cfg.max_position)?;
    let dot = |e: &[f64]| -> f64 { head.embed_weights.iter().zip(e).map(|(a, b)| a * b).sum() };
    let bias = if backdoor.position_input {
        BiasTower {
            weights: head.position_weights.clone(),
            offset: head.offset + dot(&mean_embedding),
        }
    } else {
        BiasTower {
            weights: slot_means
                .iter()
                .map(|m| dot(m.as_deref().unwrap_or(&mean_embedding)))
                .collect(),
            offset: head.offset,
        }
    };

    let mut relevance = init_tower(cfg, rows.dim())?;
    let curve = fit_click_model(
        &rows,
        val.as_ref(),
        &mut relevance,
        BiasMode::Frozen(&bias),
        DropoutSpec::new(0.0, false)?,
        cfg,
    )?;
    assert_eq!(
        frozen,
        param_bits(policy_net),
        "frozen policy embedding changed during the backdoor fit"
    );
    Ok((
        Trained {
            model: TwoTowerModel {
                relevance,
                bias,
                variant: Variant::Backdoor,
            },
            curve,
        },
        BackdoorArtifacts {
            policy_net: policy_net.clone(),
            head,
            mean_embedding,
            biased_exam_logits: biased_exam_logits.to_vec(),
        },
    ))
}
