//! From a neighborhood to a probabilistic prediction.
//!
//! The pipeline for one target `x`: point prediction `μ = f(x)`, neighborhood
//! variance floored at `ρ`, affine calibration `γ σ² + δ`, then a fitted
//! output distribution.

mod dist;
mod family;
mod fit;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dist::{FittedDistribution, EULER_GAMMA};
pub use family::DistributionFamily;
pub use fit::{
    fit_distribution, positive_shift, silverman_bandwidth, MAX_SKEW, MAX_STUDENT_DF, MIN_STUDENT_DF,
    MLE_MAX_ITER, MLE_REL_TOL,
};

use crate::affinity::{compute_affinities, top_k, NeighborSet};
use crate::dataset::Dataset;
use crate::error::{IbugError, Result};
use crate::gbrt::Ensemble;
use crate::leaf_index::LeafIndex;

/// Default variance floor used before tuning picks one.
pub const DEFAULT_RHO: f64 = 1e-15;

/// Quantile levels written into prediction records.
pub const RECORD_QUANTILES: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub k: usize,
    pub rho: f64,
    pub gamma: f64,
    pub delta: f64,
    pub family: DistributionFamily,
}

impl PosteriorConfig {
    pub fn new(k: usize) -> Self {
        PosteriorConfig {
            k,
            rho: DEFAULT_RHO,
            gamma: 1.0,
            delta: 0.0,
            family: DistributionFamily::Normal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(IbugError::invalid(format!("k = {} but at least 2 neighbors are needed", self.k)));
        }
        if !(self.rho > 0.0) {
            return Err(IbugError::invalid("rho must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(IbugError::invalid("gamma must be positive"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(IbugError::invalid("delta must be non-negative"));
        }
        Ok(())
    }
}

/// Unbiased sample variance (two-pass). Needs at least two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `max(sample variance of neighbor targets, ρ)`.
pub fn raw_variance(neighbors: &NeighborSet, rho: f64) -> Result<f64> {
    if neighbors.k() < 2 {
        return Err(IbugError::invalid("variance needs at least two neighbors"));
    }
    Ok(sample_variance(&neighbors.targets).max(rho))
}

/// `γ σ² + δ`.
pub fn calibrate_variance(sigma2: f64, gamma: f64, delta: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(IbugError::invalid("variance must be positive before calibration"));
    }
    let out = gamma * sigma2 + delta;
    if !(out > 0.0 && out.is_finite()) {
        return Err(IbugError::invalid(format!("calibrated variance {out} is not positive")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbPrediction {
    pub mu: f64,
    pub sigma2: f64,
    pub dist: FittedDistribution,
}

impl ProbPrediction {
    pub fn record(&self) -> PredictionRecord {
        PredictionRecord {
            mu: self.mu,
            sigma2: self.sigma2,
            family: self.dist.family(),
            params: self.dist.params(),
            quantiles: RECORD_QUANTILES
                .iter()
                .map(|&q| (format!("{q}"), self.dist.quantile(q)))
                .collect(),
        }
    }
}

/// One JSON-lines output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub mu: f64,
    pub sigma2: f64,
    pub family: DistributionFamily,
    pub params: serde_json::Value,
    pub quantiles: BTreeMap<String, f64>,
}

/// Variance, calibration and fit for an already-selected neighborhood.
pub fn posterior_from_neighbors(mu: f64, neighbors: &NeighborSet, cfg: &PosteriorConfig) -> Result<ProbPrediction> {
    let raw = raw_variance(neighbors, cfg.rho)?;
    let sigma2 = calibrate_variance(raw, cfg.gamma, cfg.delta)?;
    let dist = fit_distribution(cfg.family, &neighbors.targets, mu, sigma2)?;
    Ok(ProbPrediction { mu, sigma2, dist })
}

/// Full probabilistic prediction for one feature row.
pub fn predict_probabilistic(
    x: &[f64],
    model: &Ensemble,
    index: &LeafIndex,
    trees: &[usize],
    cfg: &PosteriorConfig,
) -> Result<ProbPrediction> {
    cfg.validate()?;
    let mu = model.predict(x)?;
    let aff = compute_affinities(x, model, index, trees)?;
    let neighbors = top_k(&aff, cfg.k, index.targets())?;
    posterior_from_neighbors(mu, &neighbors, cfg)
}

/// [`predict_probabilistic`] for every row, in parallel, in row order.
pub fn predict_batch(
    rows: &Dataset,
    model: &Ensemble,
    index: &LeafIndex,
    trees: &[usize],
    cfg: &PosteriorConfig,
) -> Vec<Result<ProbPrediction>> {
    (0..rows.n_rows())
        .into_par_iter()
        .map(|i| predict_probabilistic(rows.row(i), model, index, trees, cfg))
        .collect()
}
