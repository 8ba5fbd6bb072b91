//! Accuracy metrics, the paired bias t-test, train/test splitting and k-fold
//! cross-validation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{fit_forest, predict_forest, ForestError, ForestParams, Matrix};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {pred} predictions vs {actual} reference values")]
    LengthMismatch { pred: usize, actual: usize },
    #[error("no observations to evaluate")]
    Empty,
    #[error("reference value at position {index} is not positive ({value})")]
    NonPositiveActual { index: usize, value: f64 },
    #[error("non-finite prediction at position {0}")]
    NonFinitePrediction(usize),
    #[error("test fraction must be in (0, 1) and n >= 2 (fraction {fraction}, n {n})")]
    BadFraction { fraction: f64, n: usize },
    #[error("{k}-fold cross-validation needs k >= 2 and at least k samples, got {n}")]
    TooFewSamples { n: usize, k: usize },
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mape_pct: f64,
    pub mae_s: f64,
    pub mse_s2: f64,
    /// Mean of prediction - actual.
    pub delta_s: f64,
    /// Two-sided p-value of the paired t-test on prediction - actual;
    /// `None` when n = 1.
    pub p_value: Option<f64>,
    pub apr: f64,
    pub r2: f64,
}

pub fn evaluate(pred: &[f64], actual: &[f64]) -> Result<EvalReport, EvalError> {
    if pred.len() != actual.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), actual: actual.len() });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some((index, &value)) = actual.iter().enumerate().find(|(_, a)| !(**a > 0.0 && a.is_finite())) {
        return Err(EvalError::NonPositiveActual { index, value });
    }
    if let Some(i) = pred.iter().position(|p| !p.is_finite()) {
        return Err(EvalError::NonFinitePrediction(i));
    }
    let n = pred.len();
    let nf = n as f64;
    let diffs: Vec<f64> = pred.iter().zip(actual).map(|(p, a)| p - a).collect();
    let mean = |it: &mut dyn Iterator<Item = f64>| it.sum::<f64>() / nf;

    let mape_pct = 100.0 * mean(&mut diffs.iter().zip(actual).map(|(d, a)| d.abs() / a));
    let mae_s = mean(&mut diffs.iter().map(|d| d.abs()));
    let sse: f64 = diffs.iter().map(|d| d * d).sum();
    let delta_s = mean(&mut diffs.iter().copied());
    let apr = mean(&mut pred.iter().zip(actual).map(|(p, a)| p / a));
    let actual_mean = mean(&mut actual.iter().copied());
    let sst: f64 = actual.iter().map(|a| (a - actual_mean).powi(2)).sum();
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(EvalReport { n, mape_pct, mae_s, mse_s2: sse / nf, delta_s, p_value: paired_t_test_p(&diffs), apr, r2 })
}

/// Two-sided one-sample t-test of `mean(diffs) = 0` with n - 1 degrees of
/// freedom. Identically zero differences give 1, constant non-zero ones 0.
pub fn paired_t_test_p(diffs: &[f64]) -> Option<f64> {
    let n = diffs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 || diffs.iter().all(|d| *d == diffs[0]) {
        return Some(if diffs[0] == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / nf).sqrt();
    Some(student_t_two_sided_p(t, nf - 1.0))
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Lanczos approximation (g = 7, n = 9) of ln Γ(x) for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..].iter().enumerate().fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Seeded shuffle of `0..n`; the last `round(n * test_fraction)` indices
/// (at least 1, at most n - 1) form the test set. Both sets are returned sorted.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) || n < 2 {
        return Err(EvalError::BadFraction { fraction: test_fraction, n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_from_seed(seed));
    let n_test = ((n as f64 * test_fraction + 0.5).floor() as usize).clamp(1, n - 1);
    let mut test = idx.split_off(n - n_test);
    idx.sort_unstable();
    test.sort_unstable();
    Ok((idx, test))
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first `n % k`
/// folds hold one extra index.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || n < k {
        return Err(EvalError::TooFewSamples { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_from_seed(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Forest parameters used to train fold `fold`: the base parameters with the
/// seed replaced by `child_seed(params.seed, fold)`.
pub fn fold_params(params: &ForestParams, fold: usize) -> ForestParams {
    ForestParams { seed: rng::child_seed(params.seed, fold as u64), ..*params }
}

/// Per-fold validation MAE, in fold order.
pub fn kfold_cv(x: &Matrix, y: &[f64], params: &ForestParams, k: usize, seed: u64) -> Result<Vec<f64>, EvalError> {
    if x.n_rows() != y.len() {
        return Err(ForestError::DimensionMismatch { expected: x.n_rows(), found: y.len() }.into());
    }
    let folds = fold_partition(y.len(), k, seed)?;
    let mut in_fold = vec![0usize; y.len()];
    for (f, members) in folds.iter().enumerate() {
        for &i in members {
            in_fold[i] = f;
        }
    }
    folds
        .iter()
        .enumerate()
        .map(|(f, valid)| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| in_fold[i] != f).collect();
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let forest = fit_forest(&x.select_rows(&train), &y_train, &fold_params(params, f))?;
            let pred = predict_forest(&forest, &x.select_rows(valid))?;
            Ok(pred.iter().zip(valid).map(|(p, &i)| (p - y[i]).abs()).sum::<f64>() / valid.len() as f64)
        })
        .collect()
}
