use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_leaves: usize,
    /// L2 penalty on leaf values.
    pub lambda_reg: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_leaves: 10,
            lambda_reg: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: ArrayView1<'_, f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Row indices of every feature, sorted by (value, row).
#[derive(Debug, Clone)]
pub(crate) struct SortedColumns {
    columns: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub(crate) fn new(x: ArrayView2<'_, f64>) -> Self {
        let columns = (0..x.ncols())
            .map(|f| {
                let col = x.column(f);
                let mut idx: Vec<u32> = (0..x.nrows() as u32).collect();
                idx.sort_by(|&a, &b| {
                    col[a as usize]
                        .total_cmp(&col[b as usize])
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        SortedColumns { columns }
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct OpenLeaf {
    node: usize,
    columns: Vec<Vec<u32>>,
    best: Option<Split>,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

/// Best split of one leaf. Scans features in index order and thresholds in
/// ascending order, keeping the first strict maximum.
fn best_split(
    x: ArrayView2<'_, f64>,
    columns: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
) -> Option<Split> {
    let rows = &columns[0];
    let g_total: f64 = rows.iter().map(|&r| grad[r as usize]).sum();
    let h_total: f64 = rows.iter().map(|&r| hess[r as usize]).sum();
    let parent = score(g_total, h_total, lambda);
    let mut best: Option<Split> = None;
    for (f, sorted) in columns.iter().enumerate() {
        let col = x.column(f);
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..sorted.len().saturating_sub(1) {
            let r = sorted[w] as usize;
            gl += grad[r];
            hl += hess[r];
            let v = col[r];
            let next = col[sorted[w + 1] as usize];
            if !(v < next) {
                continue;
            }
            let gain = score(gl, hl, lambda) + score(g_total - gl, h_total - hl, lambda) - parent;
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                let mut threshold = (v + next) / 2.0;
                if threshold <= v {
                    threshold = next;
                }
                best = Some(Split {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
    }
    best
}

/// Grows one tree on gradients/hessians, best-first by split gain
/// `G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)`, until `max_leaves` leaves exist
/// or no split has positive gain. Leaf values are `−G/(H+λ)`.
pub fn fit_tree(
    x: ArrayView2<'_, f64>,
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
) -> RegressionTree {
    let sorted = SortedColumns::new(x);
    fit_tree_presorted(x, &sorted, grad, hess, params)
}

pub(crate) fn fit_tree_presorted(
    x: ArrayView2<'_, f64>,
    sorted: &SortedColumns,
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
) -> RegressionTree {
    assert_eq!(grad.len(), x.nrows());
    assert_eq!(hess.len(), x.nrows());
    let lambda = params.lambda_reg;
    let leaf_of = |rows: &[u32]| {
        let g: f64 = rows.iter().map(|&r| grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| hess[r as usize]).sum();
        leaf_value(g, h, lambda)
    };
    if x.nrows() == 0 || x.ncols() == 0 {
        return RegressionTree::constant(0.0);
    }
    let mut nodes = vec![Node::Leaf {
        value: leaf_of(&sorted.columns[0]),
    }];
    if params.max_leaves <= 1 {
        return RegressionTree { nodes };
    }
    let root_columns = sorted.columns.clone();
    let best = best_split(x, &root_columns, grad, hess, lambda);
    let mut open = vec![OpenLeaf {
        node: 0,
        columns: root_columns,
        best,
    }];
    let mut go_left = vec![false; x.nrows()];
    let mut n_leaves = 1;

    while n_leaves < params.max_leaves {
        // Highest gain; earliest-created leaf on ties.
        let mut pick: Option<usize> = None;
        for (i, leaf) in open.iter().enumerate() {
            if let Some(s) = leaf.best {
                if pick.is_none_or(|p| s.gain > open[p].best.map_or(f64::NEG_INFINITY, |b| b.gain)) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let leaf = open.remove(pick);
        let split = leaf.best.expect("picked leaf has a split");

        let col = x.column(split.feature);
        for &r in &leaf.columns[0] {
            go_left[r as usize] = col[r as usize] < split.threshold;
        }
        let (mut left_cols, mut right_cols) = (Vec::new(), Vec::new());
        for c in &leaf.columns {
            let (l, r): (Vec<u32>, Vec<u32>) = c.iter().partition(|&&r| go_left[r as usize]);
            left_cols.push(l);
            right_cols.push(r);
        }

        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf {
            value: leaf_of(&left_cols[0]),
        });
        nodes.push(Node::Leaf {
            value: leaf_of(&right_cols[0]),
        });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        n_leaves += 1;
        if n_leaves < params.max_leaves {
            for (node, columns) in [(left, left_cols), (right, right_cols)] {
                let best = best_split(x, &columns, grad, hess, lambda);
                open.push(OpenLeaf { node, columns, best });
            }
        }
    }
    RegressionTree { nodes }
}
