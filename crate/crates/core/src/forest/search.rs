//! Randomized hyperparameter search scored by k-fold cross-validated MAE.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ForestParams, Matrix};
use crate::eval::{kfold_cv, EvalError};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("search space has no candidates for `{0}`")]
    EmptySpace(&'static str),
    #[error("search budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Candidate values per hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub min_samples_split: Vec<usize>,
    pub max_features: Vec<Option<usize>>,
    pub bootstrap: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_trees: vec![100, 200, 400],
            max_depth: vec![5, 10, 15, 20],
            min_samples_split: vec![2, 5, 10],
            max_features: vec![None, Some(3), Some(6)],
            bootstrap: vec![true, false],
        }
    }
}

impl SearchSpace {
    fn check(&self) -> Result<(), SearchError> {
        let lists = [
            ("n_trees", self.n_trees.is_empty()),
            ("max_depth", self.max_depth.is_empty()),
            ("min_samples_split", self.min_samples_split.is_empty()),
            ("max_features", self.max_features.is_empty()),
            ("bootstrap", self.bootstrap.is_empty()),
        ];
        match lists.iter().find(|(_, empty)| *empty) {
            Some((name, _)) => Err(SearchError::EmptySpace(name)),
            None => Ok(()),
        }
    }

    /// `budget` configurations drawn uniformly (with replacement); each gets
    /// `seed` as its forest seed.
    pub fn sample(&self, budget: usize, seed: u64) -> Result<Vec<ForestParams>, SearchError> {
        self.check()?;
        let mut rng = rng::rng_from_seed(seed);
        let mut pick = |len: usize| rng.random_range(0..len);
        Ok((0..budget)
            .map(|_| ForestParams {
                n_trees: self.n_trees[pick(self.n_trees.len())],
                max_depth: self.max_depth[pick(self.max_depth.len())],
                min_samples_split: self.min_samples_split[pick(self.min_samples_split.len())],
                max_features: self.max_features[pick(self.max_features.len())],
                bootstrap: self.bootstrap[pick(self.bootstrap.len())],
                seed,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ForestParams,
    pub best_cv_mae: f64,
    /// Every evaluated configuration with its mean CV MAE, in sampling order.
    pub trials: Vec<(ForestParams, f64)>,
}

/// Returns the sampled configuration with the lowest mean `folds`-fold MAE;
/// the first sampled wins ties.
pub fn random_search(
    x: &Matrix,
    y: &[f64],
    space: &SearchSpace,
    budget: usize,
    folds: usize,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    if budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let configs = space.sample(budget, seed)?;
    let mut trials = Vec::with_capacity(configs.len());
    for params in configs {
        let maes = kfold_cv(x, y, &params, folds, seed)?;
        trials.push((params, maes.iter().sum::<f64>() / maes.len() as f64));
    }
    let (best, best_cv_mae) = trials
        .iter()
        .fold(None::<(ForestParams, f64)>, |acc, &(p, m)| match acc {
            Some((_, best)) if best <= m => acc,
            _ => Some((p, m)),
        })
        .expect("budget >= 1");
    Ok(SearchResult { best, best_cv_mae, trials })
}
