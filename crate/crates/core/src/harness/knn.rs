//! Euclidean nearest-neighbor baseline.
//!
//! Features are standardized with statistics from the reference set, missing
//! values are imputed at the standardized mean (zero), and distances use only
//! the most important features of a boosted model fit to the same reference
//! set. The mean and the variance come from two separately tuned `k`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{IbugError, Result};
use crate::gbrt::{train, TrainConfig};
use crate::metrics::nll;
use crate::posterior::{FittedDistribution, DEFAULT_RHO};
use crate::tuning::DEFAULT_K_GRID;

pub const DEFAULT_TOP_FEATURES: [usize; 3] = [5, 10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGrid {
    pub k_mean: Vec<usize>,
    pub k_var: Vec<usize>,
    pub n_top_features: Vec<usize>,
}

impl KnnGrid {
    /// The standard `k` grid clipped to `n_train`, and `{5, 10, 20}` clipped
    /// to `n_features`.
    pub fn standard(n_train: usize, n_features: usize) -> Self {
        let ks: Vec<usize> = DEFAULT_K_GRID.iter().copied().filter(|&k| k <= n_train).collect();
        let mut tops: Vec<usize> = DEFAULT_TOP_FEATURES.iter().map(|&t| t.min(n_features)).collect();
        tops.dedup();
        KnnGrid {
            k_mean: ks.clone(),
            k_var: ks,
            n_top_features: tops,
        }
    }

    fn validate(&self, n_train: usize, n_features: usize) -> Result<()> {
        if self.k_mean.is_empty() || self.k_var.is_empty() || self.n_top_features.is_empty() {
            return Err(IbugError::invalid("kNN grids must be non-empty"));
        }
        if let Some(&k) = self.k_mean.iter().chain(&self.k_var).find(|&&k| k > n_train) {
            return Err(IbugError::invalid(format!("k = {k} exceeds the {n_train} training instances")));
        }
        if self.k_mean.contains(&0) || self.k_var.iter().any(|&k| k < 2) {
            return Err(IbugError::invalid("k_mean must be at least 1 and k_var at least 2"));
        }
        if self.n_top_features.iter().any(|&t| t == 0 || t > n_features) {
            return Err(IbugError::invalid(format!("feature counts must lie in [1, {n_features}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnBaselineConfig {
    pub k_mean: usize,
    pub k_var: usize,
    pub n_top_features: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnOutcome {
    pub config: KnnBaselineConfig,
    /// Mean validation NLL of the chosen configuration (floor at its default).
    pub val_nll: f64,
    /// One normal predictive distribution per test row.
    pub predictions: Vec<FittedDistribution>,
}

/// Per-feature mean and sd over non-missing values.
struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    fn fit(data: &Dataset) -> Self {
        let p = data.n_features();
        let mut mean = vec![0.0; p];
        let mut sd = vec![1.0; p];
        for j in 0..p {
            let vals: Vec<f64> = (0..data.n_rows()).map(|i| data.value(i, j)).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            mean[j] = m;
            if var > 0.0 {
                sd[j] = var.sqrt();
            }
        }
        Standardizer { mean, sd }
    }

    fn transform(&self, data: &Dataset, columns: &[usize]) -> Vec<Vec<f64>> {
        data.rows()
            .map(|row| {
                columns
                    .iter()
                    .map(|&j| {
                        let v = row[j];
                        if v.is_nan() {
                            0.0
                        } else {
                            (v - self.mean[j]) / self.sd[j]
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Feature ids by descending gain importance, lower id first on ties.
pub fn top_features(data: &Dataset, n_top: usize, config: &TrainConfig) -> Result<Vec<usize>> {
    let importance = train(data, config)?.feature_importance();
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order.truncate(n_top);
    Ok(order)
}

/// Reference rows sorted by (squared distance, id).
fn neighbor_order(query: &[f64], reference: &[Vec<f64>]) -> Vec<u32> {
    let d: Vec<f64> = reference
        .iter()
        .map(|r| r.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    let mut ids: Vec<u32> = (0..reference.len() as u32).collect();
    ids.sort_unstable_by(|&a, &b| d[a as usize].total_cmp(&d[b as usize]).then(a.cmp(&b)));
    ids
}

/// Running mean and unbiased variance of `targets[order[..k]]` at each `k`
/// in `ks` (ascending not required).
fn prefix_moments(order: &[u32], targets: &[f64], ks: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let mut means = vec![0.0; kmax + 1];
    let mut vars = vec![0.0; kmax + 1];
    let (mut m, mut m2) = (0.0, 0.0);
    for (i, &id) in order.iter().take(kmax).enumerate() {
        let y = targets[id as usize];
        let n = (i + 1) as f64;
        let d = y - m;
        m += d / n;
        m2 += d * (y - m);
        means[i + 1] = m;
        vars[i + 1] = if i > 0 { m2 / (n - 1.0) } else { 0.0 };
    }
    (ks.iter().map(|&k| means[k]).collect(), ks.iter().map(|&k| vars[k]).collect())
}

fn normal(mean: f64, var: f64, rho: f64) -> FittedDistribution {
    FittedDistribution::Normal {
        mean,
        sd: var.max(rho).sqrt(),
    }
}

/// Tunes on `val` against `train`, then predicts `test` against
/// `train ∪ val` with standardization and feature ranking refit on it.
pub fn knn_baseline(
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
    grid: &KnnGrid,
    importance: &TrainConfig,
) -> Result<KnnOutcome> {
    if val.n_rows() == 0 {
        return Err(IbugError::invalid("validation set is empty"));
    }
    grid.validate(train_set.n_rows(), train_set.n_features())?;
    let scaler = Standardizer::fit(train_set);
    let ranked = top_features(train_set, *grid.n_top_features.iter().max().unwrap(), importance)?;

    // (mean nll, n_top, k_mean, k_var)
    let mut best: Option<(f64, usize, usize, usize)> = None;
    let mut best_vars: Vec<f64> = Vec::new();
    for &n_top in &grid.n_top_features {
        let cols = &ranked[..n_top];
        let reference = scaler.transform(train_set, cols);
        let queries = scaler.transform(val, cols);
        let moments: Vec<(Vec<f64>, Vec<f64>)> = queries
            .par_iter()
            .map(|q| {
                let order = neighbor_order(q, &reference);
                let (means, _) = prefix_moments(&order, train_set.targets(), &grid.k_mean);
                let (_, vars) = prefix_moments(&order, train_set.targets(), &grid.k_var);
                (means, vars)
            })
            .collect();
        for (a, &km) in grid.k_mean.iter().enumerate() {
            for (b, &kv) in grid.k_var.iter().enumerate() {
                let total: f64 = moments
                    .iter()
                    .zip(val.targets())
                    .map(|((means, vars), &y)| nll(&normal(means[a], vars[b], DEFAULT_RHO), y))
                    .sum();
                let score = total / val.n_rows() as f64;
                if best.is_none_or(|(s, ..)| score < s) {
                    best = Some((score, n_top, km, kv));
                    best_vars = moments.iter().map(|(_, v)| v[b]).collect();
                }
            }
        }
    }
    let (val_nll, n_top, k_mean, k_var) = best.expect("grids are non-empty");
    let rho = best_vars
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
        .unwrap_or(DEFAULT_RHO);
    let config = KnnBaselineConfig {
        k_mean,
        k_var,
        n_top_features: n_top,
        rho,
    };
    let predictions = predict_knn(train_set, val, test, &config, importance)?;
    Ok(KnnOutcome {
        config,
        val_nll,
        predictions,
    })
}

fn concat(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = a.rows().map(|r| r.to_vec()).collect();
    rows.extend(b.rows().map(|r| r.to_vec()));
    let mut targets = a.targets().to_vec();
    targets.extend_from_slice(b.targets());
    Dataset::from_rows(rows, targets)
}

/// Predictions for `test` with `train ∪ val` as the reference set.
pub fn predict_knn(
    train_set: &Dataset,
    val: &Dataset,
    test: &Dataset,
    config: &KnnBaselineConfig,
    importance: &TrainConfig,
) -> Result<Vec<FittedDistribution>> {
    let full = concat(train_set, val)?;
    if config.k_mean.max(config.k_var) > full.n_rows() {
        return Err(IbugError::invalid("k exceeds the reference set"));
    }
    let scaler = Standardizer::fit(&full);
    let cols = top_features(&full, config.n_top_features, importance)?;
    let reference = scaler.transform(&full, &cols);
    let queries = scaler.transform(test, &cols);
    let ks = [config.k_mean, config.k_var];
    Ok(queries
        .par_iter()
        .map(|q| {
            let order = neighbor_order(q, &reference);
            let (means, vars) = prefix_moments(&order, full.targets(), &ks);
            normal(means[0], vars[1], config.rho)
        })
        .collect())
}
