//! Second-order gradient boosting with best-first leaf growth.
//!
//! Two objectives are provided: pointwise squared error and LambdaRank with
//! |ΔnDCG|-weighted pairwise gradients. Trees split on `x[feature] <
//! threshold` (left) with exact thresholds taken halfway between adjacent
//! distinct feature values.

mod boost;
mod lambdarank;
mod tree;

use std::ops::Range;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub use boost::{fit_gbdt, kfold_fit, kfold_fit_predict, predict, GbdtModel, GbdtParams, KFoldModels, Objective};
pub use lambdarank::{lambda_gradients, swap_delta_ndcg};
pub use tree::{fit_tree, Node, RegressionTree, TreeParams};

/// Feature rows with targets, grouped by query.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingDataset {
    pub features: Array2<f64>,
    pub targets: Vec<f64>,
    pub groups: Vec<Range<usize>>,
}

impl RankingDataset {
    /// Checks shapes and that `groups` tile `0..n` in order.
    pub fn new(features: Array2<f64>, targets: Vec<f64>, groups: Vec<Range<usize>>) -> Result<Self> {
        if features.nrows() != targets.len() {
            return Err(Error::validation(format!(
                "{} feature rows for {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        let mut next = 0;
        for g in &groups {
            if g.start != next || g.end <= g.start {
                return Err(Error::validation("query groups must tile the rows in order"));
            }
            next = g.end;
        }
        if next != targets.len() {
            return Err(Error::validation("query groups do not cover every row"));
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite feature or target"));
        }
        Ok(RankingDataset {
            features,
            targets,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Keeps the listed query groups, in the given order.
    pub fn select_groups(&self, which: &[usize]) -> RankingDataset {
        let rows: Vec<usize> = which.iter().flat_map(|&g| self.groups[g].clone()).collect();
        let features = self.features.select(ndarray::Axis(0), &rows);
        let targets = rows.iter().map(|&r| self.targets[r]).collect();
        let mut groups = Vec::with_capacity(which.len());
        let mut start = 0;
        for &g in which {
            let len = self.groups[g].len();
            groups.push(start..start + len);
            start += len;
        }
        RankingDataset {
            features,
            targets,
            groups,
        }
    }
}
