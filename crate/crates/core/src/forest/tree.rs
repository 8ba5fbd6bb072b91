//! Variance-reduction regression trees (CART).

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{ForestError, ForestParams, Matrix};
use crate::rng::StageRng;

/// A fitted regression tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
        n: usize,
    },
    Split {
        #[serde(rename = "f")]
        feature: usize,
        #[serde(rename = "t")]
        threshold: f64,
        #[serde(rename = "l")]
        left: Box<TreeNode>,
        #[serde(rename = "r")]
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Number of training samples (bootstrap duplicates included) under this node.
    pub fn sample_count(&self) -> usize {
        match self {
            TreeNode::Leaf { n, .. } => *n,
            TreeNode::Split { left, right, .. } => left.sample_count() + right.sample_count(),
        }
    }

    /// Sum of training targets under this node, rebuilt from leaf means.
    pub(crate) fn target_sum(&self) -> f64 {
        match self {
            TreeNode::Leaf { value, n } => value * *n as f64,
            TreeNode::Split { left, right, .. } => left.target_sum() + right.target_sum(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub(crate) fn validate(&self, n_features: usize) -> Result<(), String> {
        match self {
            TreeNode::Leaf { value, n } => {
                if *n == 0 || !value.is_finite() {
                    return Err(format!("leaf with n={n}, value={value}"));
                }
                Ok(())
            }
            TreeNode::Split { feature, threshold, left, right } => {
                if *feature >= n_features || !threshold.is_finite() {
                    return Err(format!("split on feature {feature} at {threshold}"));
                }
                left.validate(n_features)?;
                right.validate(n_features)
            }
        }
    }
}

/// Leaf value reached by routing `x` through the tree.
pub fn predict_tree(tree: &TreeNode, x: &[f64]) -> f64 {
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { value, .. } => return *value,
            TreeNode::Split { feature, threshold, left, right } => {
                node = if x[*feature] <= *threshold { left } else { right };
            }
        }
    }
}

/// Fits one tree on every row of `x`.
pub fn fit_tree(x: &Matrix, y: &[f64], params: &ForestParams, rng: &mut StageRng) -> Result<TreeNode, ForestError> {
    super::check_training_data(x, y)?;
    params.validate(x.n_cols())?;
    Ok(fit_tree_on_sample(x, y, (0..x.n_rows()).collect(), params, rng))
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Reduction in the sum of squared errors.
    pub gain: f64,
}

/// Midpoint of two consecutive distinct sorted values, nudged so that
/// `lo <= t < hi` survives rounding.
pub(crate) fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo + (hi - lo) * 0.5;
    if t >= hi {
        lo
    } else {
        t
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    // per sample position: row index into x / target
    rows: Vec<usize>,
    targets: Vec<f64>,
    // per feature: sample positions sorted by that feature, partitioned by node
    orders: Vec<Vec<usize>>,
    go_left: Vec<bool>,
    scratch: Vec<usize>,
    max_depth: usize,
    min_samples_split: usize,
    max_features: usize,
}

impl Builder<'_> {
    fn value(&self, pos: usize, feature: usize) -> f64 {
        self.x.get(self.rows[pos], feature)
    }

    fn build(&mut self, start: usize, end: usize, depth: usize, rng: &mut StageRng) -> TreeNode {
        let n = end - start;
        let segment = &self.orders[0][start..end];
        let sum: f64 = segment.iter().map(|&p| self.targets[p]).sum();
        let mean = sum / n as f64;
        let first = self.targets[segment[0]];
        let constant = segment.iter().all(|&p| self.targets[p] == first);
        let leaf = TreeNode::Leaf { value: if constant { first } else { mean }, n };
        if depth >= self.max_depth || n < self.min_samples_split || constant {
            return leaf;
        }
        let Some(split) = self.best_split(start, end, mean, rng) else {
            return leaf;
        };

        for &p in &self.orders[0][start..end] {
            self.go_left[p] = self.value(p, split.feature) <= split.threshold;
        }
        let mut n_left = 0;
        for f in 0..self.orders.len() {
            self.scratch.clear();
            let seg = &mut self.orders[f][start..end];
            let mut w = 0;
            for i in 0..seg.len() {
                let p = seg[i];
                if self.go_left[p] {
                    seg[w] = p;
                    w += 1;
                } else {
                    self.scratch.push(p);
                }
            }
            seg[w..].copy_from_slice(&self.scratch);
            n_left = w;
        }
        let left = self.build(start, start + n_left, depth + 1, rng);
        let right = self.build(start + n_left, end, depth + 1, rng);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn best_split(&self, start: usize, end: usize, mean: f64, rng: &mut StageRng) -> Option<SplitChoice> {
        let n_features = self.orders.len();
        let candidates: Vec<usize> = if self.max_features < n_features {
            let mut picked = index::sample(rng, n_features, self.max_features).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..n_features).collect()
        };
        let n = end - start;
        // centred targets make the SSE reduction of a split equal to
        // sum_l^2/n_l + sum_r^2/n_r without cancellation
        let centred_total: f64 = self.orders[0][start..end].iter().map(|&p| self.targets[p] - mean).sum();
        let sse: f64 = self.orders[0][start..end].iter().map(|&p| (self.targets[p] - mean).powi(2)).sum();
        let tol = 1e-12 * sse;
        let mut best: Option<SplitChoice> = None;
        for f in candidates {
            let seg = &self.orders[f][start..end];
            let mut sum_left = 0.0;
            for i in 1..n {
                sum_left += self.targets[seg[i - 1]] - mean;
                let lo = self.value(seg[i - 1], f);
                let hi = self.value(seg[i], f);
                if lo >= hi {
                    continue;
                }
                let (nl, nr) = (i as f64, (n - i) as f64);
                let sum_right = centred_total - sum_left;
                let gain = sum_left * sum_left / nl + sum_right * sum_right / nr;
                let floor = best.map_or(tol, |b| b.gain + tol);
                if gain > floor {
                    best = Some(SplitChoice { feature: f, threshold: midpoint(lo, hi), gain });
                }
            }
        }
        best
    }
}

/// Fits a tree on the sample `rows` (indices into `x`, duplicates allowed).
/// Inputs are assumed validated.
pub(crate) fn fit_tree_on_sample(
    x: &Matrix,
    y: &[f64],
    rows: Vec<usize>,
    params: &ForestParams,
    rng: &mut StageRng,
) -> TreeNode {
    let m = rows.len();
    let targets: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let orders = (0..x.n_cols())
        .map(|f| {
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| x.get(rows[a], f).total_cmp(&x.get(rows[b], f)).then(a.cmp(&b)));
            order
        })
        .collect();
    let mut builder = Builder {
        x,
        rows,
        targets,
        orders,
        go_left: vec![false; m],
        scratch: Vec::with_capacity(m),
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        max_features: params.max_features.unwrap_or(x.n_cols()),
    };
    builder.build(0, m, 0, rng)
}

/// Root split chosen on all rows with every feature considered, or `None` when
/// the root would be a leaf. Exposed for split-search verification.
pub fn root_split(x: &Matrix, y: &[f64], min_samples_split: usize) -> Result<Option<(usize, f64)>, ForestError> {
    let params = ForestParams { max_depth: 1, min_samples_split, max_features: None, ..ForestParams::default() };
    let tree = fit_tree(x, y, &params, &mut crate::rng::rng_from_seed(0))?;
    Ok(match tree {
        TreeNode::Split { feature, threshold, .. } => Some((feature, threshold)),
        TreeNode::Leaf { .. } => None,
    })
}
