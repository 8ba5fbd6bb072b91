//! Bootstrap random forest of CART regression trees.
//!
//! Tree `t` of a forest draws everything it needs (bootstrap rows, per-node
//! feature subsets) from its own generator, seeded with
//! [`crate::rng::child_seed`]`(params.seed, t)`. Trees are fitted in parallel and
//! assembled in index order, so a model depends only on its inputs and seed.

mod search;
pub mod tree;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FEATURE_COUNT, FEATURE_NAMES};
use crate::rng;

pub use search::{random_search, SearchError, SearchResult, SearchSpace};
pub use tree::{fit_tree, predict_tree, root_split, TreeNode};

/// Version tag written into model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Matrix {
    /// All rows must have the same width. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, ForestError> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(ForestError::DimensionMismatch { expected: n_cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { data, n_rows: rows.len(), n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { data, n_rows: idx.len(), n_cols: self.n_cols }
    }
}

pub(crate) fn check_training_data(x: &Matrix, y: &[f64]) -> Result<(), ForestError> {
    if x.n_rows() == 0 {
        return Err(ForestError::EmptyTrainingSet);
    }
    if x.n_rows() != y.len() {
        return Err(ForestError::DimensionMismatch { expected: x.n_rows(), found: y.len() });
    }
    if x.n_cols() == 0 {
        return Err(ForestError::DimensionMismatch { expected: FEATURE_COUNT, found: 0 });
    }
    for (i, (row, t)) in x.rows().zip(y).enumerate() {
        if !t.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite(i));
        }
    }
    Ok(())
}

/// Forest hyperparameters. `max_features = None` considers every feature at
/// every split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 400, max_depth: 10, min_samples_split: 2, max_features: None, bootstrap: true, seed: 0 }
    }
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidParams("min_samples_split must be at least 2".into()));
        }
        if let Some(k) = self.max_features {
            if k == 0 || k > n_features {
                return Err(ForestError::InvalidParams(format!("max_features must be in 1..={n_features}, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub format_version: u32,
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
}

fn default_feature_names(n: usize) -> Vec<String> {
    if n == FEATURE_COUNT {
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("x{i}")).collect()
    }
}

pub fn fit_forest(x: &Matrix, y: &[f64], params: &ForestParams) -> Result<RegressionForest, ForestError> {
    check_training_data(x, y)?;
    params.validate(x.n_cols())?;
    let n = x.n_rows();
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::child_rng(params.seed, t as u64);
            let rows: Vec<usize> =
                if params.bootstrap { (0..n).map(|_| rng.random_range(0..n)).collect() } else { (0..n).collect() };
            tree::fit_tree_on_sample(x, y, rows, params, &mut rng)
        })
        .collect();
    Ok(RegressionForest {
        format_version: MODEL_FORMAT_VERSION,
        params: *params,
        feature_names: default_feature_names(x.n_cols()),
        trees,
    })
}

impl RegressionForest {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Mean of the per-tree predictions for one row.
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| predict_tree(t, x)).sum();
        sum / self.trees.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ForestError> {
        let forest: Self = serde_json::from_str(s).map_err(|e| ForestError::InvalidModel(e.to_string()))?;
        forest.check()?;
        Ok(forest)
    }

    fn check(&self) -> Result<(), ForestError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ForestError::InvalidModel(format!("unsupported format_version {}", self.format_version)));
        }
        if self.trees.is_empty() || self.trees.len() != self.params.n_trees {
            return Err(ForestError::InvalidModel(format!(
                "expected {} trees, found {}",
                self.params.n_trees,
                self.trees.len()
            )));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.validate(self.n_features()).map_err(|e| ForestError::InvalidModel(format!("tree {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        use anyhow::Context;
        let text = std::fs::read_to_string(path).with_context(|| format!("{}: cannot read model", path.display()))?;
        Self::from_json(&text).with_context(|| format!("{}: invalid model", path.display()))
    }
}

/// Per-row forest predictions. An empty matrix gives an empty vector.
pub fn predict_forest(forest: &RegressionForest, x: &Matrix) -> Result<Vec<f64>, ForestError> {
    if x.n_rows() == 0 {
        return Ok(Vec::new());
    }
    if x.n_cols() != forest.n_features() {
        return Err(ForestError::DimensionMismatch { expected: forest.n_features(), found: x.n_cols() });
    }
    Ok(x.rows().map(|r| forest.predict_row(r)).collect())
}

/// Mean-decrease-in-impurity importances.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    /// Normalized to sum 1; all zero when `no_splits`.
    pub weights: Vec<f64>,
    pub no_splits: bool,
}

/// Adds each split's weighted variance decrease to its feature.
///
/// A split's decrease `SSE_parent - SSE_left - SSE_right` equals
/// `n_l * n_r / n * (mean_l - mean_r)^2`, which depends only on leaf means and
/// counts, so it is recovered exactly from the stored tree.
fn accumulate_decrease(node: &TreeNode, n_root: f64, acc: &mut [f64]) {
    if let TreeNode::Split { feature, left, right, .. } = node {
        let (nl, nr) = (left.sample_count() as f64, right.sample_count() as f64);
        let diff = left.target_sum() / nl - right.target_sum() / nr;
        acc[*feature] += nl * nr / (nl + nr) * diff * diff / n_root;
        accumulate_decrease(left, n_root, acc);
        accumulate_decrease(right, n_root, acc);
    }
}

pub fn mdi_importance(forest: &RegressionForest) -> Importance {
    let d = forest.n_features();
    let mut total = vec![0.0; d];
    for t in &forest.trees {
        let mut acc = vec![0.0; d];
        accumulate_decrease(t, t.sample_count() as f64, &mut acc);
        for (s, a) in total.iter_mut().zip(acc) {
            *s += a / forest.trees.len() as f64;
        }
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        Importance { weights: total.iter().map(|v| v / sum).collect(), no_splits: false }
    } else {
        Importance { weights: vec![0.0; d], no_splits: true }
    }
}
