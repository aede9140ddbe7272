use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lambdarank::lambda_gradients;
use super::tree::{fit_tree_presorted, RegressionTree, SortedColumns, TreeParams};
use super::RankingDataset;
use crate::error::{Error, Result};
use crate::eval::{ndcg_at_k, rank_by_scores};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Objective {
    PointwiseSquaredError,
    #[serde(rename = "lambdarank_ndcg")]
    LambdaRank {
        #[serde(default = "default_truncation")]
        truncation: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
}

fn default_truncation() -> usize {
    10
}

fn default_sigma() -> f64 {
    1.0
}

impl Objective {
    pub fn lambdarank() -> Self {
        Objective::LambdaRank {
            truncation: default_truncation(),
            sigma: default_sigma(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_leaves: usize,
    pub learning_rate: f64,
    pub lambda_reg: f64,
    /// Stop after this many rounds without validation improvement. `None`
    /// always fits `n_trees` trees.
    pub early_stop_rounds: Option<usize>,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 500,
            max_leaves: 10,
            learning_rate: 0.01,
            lambda_reg: 1.0,
            early_stop_rounds: Some(100),
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_leaves == 0 {
            return Err(Error::validation("max_leaves must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::validation("lambda_reg must be non-negative"));
        }
        if self.early_stop_rounds == Some(0) {
            return Err(Error::validation("early_stop_rounds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub objective: Objective,
    pub dim: usize,
    pub learning_rate: f64,
    pub base_score: f64,
    pub trees: Vec<RegressionTree>,
}

impl GbdtModel {
    /// `base_score + learning_rate · Σ tree(x)`, summing trees in order.
    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        self.base_score + self.learning_rate * sum
    }

    pub fn predict_dataset(&self, data: &RankingDataset) -> Result<Vec<f64>> {
        self.check_dim(data.dim())?;
        Ok(data.features.rows().into_iter().map(|r| self.predict_row(r)).collect())
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(Error::validation(format!(
                "model expects {} features, got {dim}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Scores one feature vector.
pub fn predict(model: &GbdtModel, x: &[f64]) -> Result<f64> {
    model.check_dim(x.len())?;
    Ok(model.predict_row(ArrayView1::from(x)))
}

fn lambdarank_grades(targets: &[f64]) -> Result<Vec<u8>> {
    targets
        .iter()
        .map(|&t| {
            if t.fract() == 0.0 && (0.0..=4.0).contains(&t) {
                Ok(t as u8)
            } else {
                Err(Error::validation(format!(
                    "lambdarank targets must be grades 0..=4, got {t}"
                )))
            }
        })
        .collect()
}

/// Validation score where higher is better.
fn validation_score(objective: Objective, data: &RankingDataset, grades: &[u8], scores: &[f64]) -> f64 {
    match objective {
        Objective::PointwiseSquaredError => {
            let sse: f64 = scores
                .iter()
                .zip(&data.targets)
                .map(|(s, y)| (s - y).powi(2))
                .sum();
            -sse / scores.len() as f64
        }
        Objective::LambdaRank { truncation, .. } => {
            let total: f64 = data
                .groups
                .iter()
                .map(|g| {
                    let keys: Vec<usize> = g.clone().collect();
                    let order = rank_by_scores(&scores[g.clone()], &keys);
                    let ranked: Vec<u8> = order.iter().map(|&i| grades[g.start + i]).collect();
                    ndcg_at_k(&ranked, truncation)
                })
                .sum();
            total / data.groups.len() as f64
        }
    }
}

/// Boosts `params.n_trees` trees, recomputing objective gradients each
/// round. With a non-empty `validation` set and `early_stop_rounds`, the
/// ensemble is cut back to the best validation round once that many rounds
/// pass without improvement (nDCG for LambdaRank, MSE for pointwise).
pub fn fit_gbdt(
    train: &RankingDataset,
    validation: Option<&RankingDataset>,
    objective: Objective,
    params: &GbdtParams,
) -> Result<GbdtModel> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::validation("empty training set"));
    }
    let validation = validation.filter(|v| !v.is_empty());
    if let Some(v) = validation {
        if v.dim() != train.dim() {
            return Err(Error::validation("validation features differ in width"));
        }
    }
    let (train_grades, val_grades) = match objective {
        Objective::LambdaRank { truncation, sigma } => {
            if truncation == 0 || !(sigma > 0.0) {
                return Err(Error::validation("lambdarank needs truncation ≥ 1 and sigma > 0"));
            }
            (
                lambdarank_grades(&train.targets)?,
                validation.map(|v| lambdarank_grades(&v.targets)).transpose()?,
            )
        }
        Objective::PointwiseSquaredError => (Vec::new(), None),
    };

    let base_score = match objective {
        Objective::PointwiseSquaredError => train.targets.iter().sum::<f64>() / train.len() as f64,
        Objective::LambdaRank { .. } => 0.0,
    };
    let mut model = GbdtModel {
        objective,
        dim: train.dim(),
        learning_rate: params.learning_rate,
        base_score,
        trees: Vec::new(),
    };
    let tree_params = TreeParams {
        max_leaves: params.max_leaves,
        lambda_reg: params.lambda_reg,
    };
    let x = train.features.view();
    let sorted = SortedColumns::new(x);
    let mut scores = vec![base_score; train.len()];
    let mut val_scores = validation.map(|v| vec![base_score; v.len()]);
    let val_grades = val_grades.unwrap_or_default();
    let mut best = validation.map(|v| {
        let s = val_scores.as_deref().expect("validation scores");
        (validation_score(objective, v, &val_grades, s), 0usize)
    });
    let patience = params.early_stop_rounds.filter(|_| validation.is_some());

    for round in 1..=params.n_trees {
        let (grad, hess) = match objective {
            Objective::PointwiseSquaredError => (
                scores.iter().zip(&train.targets).map(|(s, y)| s - y).collect(),
                vec![1.0; train.len()],
            ),
            Objective::LambdaRank { truncation, sigma } => {
                lambda_gradients(&scores, &train_grades, &train.groups, truncation, sigma)
            }
        };
        let tree = fit_tree_presorted(x, &sorted, &grad, &hess, &tree_params);
        for (s, row) in scores.iter_mut().zip(x.rows()) {
            *s += params.learning_rate * tree.predict(row);
        }
        if let (Some(v), Some(vs)) = (validation, val_scores.as_mut()) {
            for (s, row) in vs.iter_mut().zip(v.features.rows()) {
                *s += params.learning_rate * tree.predict(row);
            }
            let metric = validation_score(objective, v, &val_grades, vs);
            let (best_metric, best_round) = best.as_mut().expect("tracked with validation");
            if metric > *best_metric {
                *best_metric = metric;
                *best_round = round;
            }
        }
        model.trees.push(tree);
        if let (Some(p), Some((_, best_round))) = (patience, best) {
            if round - best_round >= p {
                model.trees.truncate(best_round);
                break;
            }
        }
    }
    if let (Some(_), Some((_, best_round))) = (patience, best) {
        model.trees.truncate(best_round);
    }
    if !scores.iter().all(|s| s.is_finite()) {
        return Err(Error::training("boosting produced non-finite scores"));
    }
    Ok(model)
}

/// Fold models from [`kfold_fit`]. `fold_of_group[g]` is the fold that
/// held out query group `g`, so `models[fold_of_group[g]]` never saw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KFoldModels {
    pub fold_of_group: Vec<usize>,
    pub models: Vec<GbdtModel>,
}

impl KFoldModels {
    /// Scores every row with the model that did not train on its group.
    /// `data` must have the same groups, in the same order, as the fit.
    pub fn predict_out_of_fold(&self, data: &RankingDataset) -> Result<Vec<f64>> {
        if data.groups.len() != self.fold_of_group.len() {
            return Err(Error::validation(format!(
                "fold assignment covers {} queries, data has {}",
                self.fold_of_group.len(),
                data.groups.len()
            )));
        }
        if let Some(m) = self.models.first() {
            if m.dim != data.dim() {
                return Err(Error::validation(format!(
                    "fold models expect {} features, data has {}",
                    m.dim,
                    data.dim()
                )));
            }
        }
        let mut out = vec![f64::NAN; data.len()];
        for (g, range) in data.groups.iter().enumerate() {
            let model = &self.models[self.fold_of_group[g]];
            for r in range.clone() {
                out[r] = model.predict_row(data.row(r));
            }
        }
        Ok(out)
    }
}

/// Query groups are shuffled with `seed` and dealt round-robin into `k`
/// folds; each fold gets a model fit on the other folds without early
/// stopping.
pub fn kfold_fit(
    data: &RankingDataset,
    k: usize,
    objective: Objective,
    params: &GbdtParams,
    seed: u64,
) -> Result<KFoldModels> {
    if k < 2 {
        return Err(Error::validation("k-fold needs k ≥ 2"));
    }
    if data.groups.len() < k {
        return Err(Error::validation(format!(
            "{} queries cannot fill {k} folds",
            data.groups.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.groups.len()).collect();
    order.shuffle(&mut rng_for(seed, "kfold"));
    let mut fold_of_group = vec![0; data.groups.len()];
    for (pos, &g) in order.iter().enumerate() {
        fold_of_group[g] = pos % k;
    }
    let mut params = *params;
    params.early_stop_rounds = None;
    let models = (0..k)
        .map(|fold| {
            let kept: Vec<usize> = order.iter().copied().filter(|&g| fold_of_group[g] != fold).collect();
            fit_gbdt(&data.select_groups(&kept), None, objective, &params)
        })
        .collect::<Result<_>>()?;
    Ok(KFoldModels { fold_of_group, models })
}

/// Out-of-fold predictions from [`kfold_fit`].
pub fn kfold_fit_predict(
    data: &RankingDataset,
    k: usize,
    objective: Objective,
    params: &GbdtParams,
    seed: u64,
) -> Result<Vec<f64>> {
    kfold_fit(data, k, objective, params, seed)?.predict_out_of_fold(data)
}
