//! Proper scoring rules and calibration diagnostics.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{IbugError, Result};
use crate::numeric::{integrate, std_normal_cdf, std_normal_pdf};
use crate::posterior::FittedDistribution;

/// Densities below this are floored before taking logs.
pub const PDF_FLOOR: f64 = 1e-300;

/// Tail mass left out of the CRPS integration range on each side.
pub const CRPS_TAIL: f64 = 1e-6;

/// Absolute tolerance of the CRPS quadrature.
pub const CRPS_TOL: f64 = 1e-6;

pub const DEFAULT_INTERVAL_ALPHA: f64 = 0.1;

/// `{0.05, 0.10, ..., 0.95}`.
pub fn default_levels() -> Vec<f64> {
    (1..20).map(|i| i as f64 / 20.0).collect()
}

/// Scoring rule used for tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScoringRule {
    #[default]
    Nll,
    Crps,
}

impl ScoringRule {
    pub fn score(&self, dist: &FittedDistribution, y: f64) -> Result<f64> {
        match self {
            ScoringRule::Nll => Ok(nll(dist, y)),
            ScoringRule::Crps => crps(dist, y),
        }
    }
}

impl FromStr for ScoringRule {
    type Err = IbugError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(ScoringRule::Nll),
            "crps" => Ok(ScoringRule::Crps),
            other => Err(IbugError::invalid(format!("unknown metric '{other}' (expected nll or crps)"))),
        }
    }
}

impl fmt::Display for ScoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoringRule::Nll => "nll",
            ScoringRule::Crps => "crps",
        })
    }
}

/// Scores with their mean and standard error `sd / sqrt(m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub metric: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
}

impl ScoreSummary {
    /// Uses the unbiased sample sd; a single score has stderr 0.
    pub fn new(metric: impl Into<String>, scores: Vec<f64>) -> Self {
        let m = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / m;
        let stderr = if scores.len() > 1 {
            let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        } else {
            0.0
        };
        ScoreSummary {
            metric: metric.into(),
            scores,
            mean,
            stderr,
        }
    }
}

/// `-ln pdf(y)` with the density floored at [`PDF_FLOOR`].
pub fn nll(dist: &FittedDistribution, y: f64) -> f64 {
    let lp = dist.ln_pdf(y);
    if lp.is_nan() {
        return -PDF_FLOOR.ln();
    }
    -lp.max(PDF_FLOOR.ln())
}

/// Closed-form CRPS of `N(mean, sd²)` at `y`.
pub fn crps_normal(mean: f64, sd: f64, y: f64) -> f64 {
    let z = (y - mean) / sd;
    sd * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / PI.sqrt())
}

/// CRPS by quadrature of `(F(t) - 1[t >= y])²`, valid for any family.
///
/// The central region `[q(CRPS_TAIL), q(1 - CRPS_TAIL)]` and the stretch
/// between it and a distant `y` are integrated separately, so a far outcome
/// does not starve the central region of resolution.
pub fn crps_quadrature(dist: &FittedDistribution, y: f64) -> Result<f64> {
    let qa = dist.quantile(CRPS_TAIL);
    let qb = dist.quantile(1.0 - CRPS_TAIL);
    let below = |t: f64| dist.cdf(t).powi(2);
    let above = |t: f64| (1.0 - dist.cdf(t)).powi(2);
    let tol = CRPS_TOL / 3.0;
    if y < qa {
        Ok(integrate(above, y, qa, tol)? + integrate(above, qa, qb, tol)?)
    } else if y > qb {
        Ok(integrate(below, qa, qb, tol)? + integrate(below, qb, y, tol)?)
    } else {
        Ok(integrate(below, qa, y, tol)? + integrate(above, y, qb, tol)?)
    }
}

pub fn crps(dist: &FittedDistribution, y: f64) -> Result<f64> {
    match *dist {
        FittedDistribution::Normal { mean, sd } => Ok(crps_normal(mean, sd, y)),
        _ => crps_quadrature(dist, y),
    }
}

/// Pinball loss averaged over `levels`.
pub fn check_score(dist: &FittedDistribution, y: f64, levels: &[f64]) -> f64 {
    let total: f64 = levels
        .iter()
        .map(|&q| {
            let yq = dist.quantile(q);
            let ind = if y < yq { 1.0 } else { 0.0 };
            (ind - q) * (yq - y)
        })
        .sum();
    total / levels.len() as f64
}

/// Width of the central `1 - alpha` interval plus miss penalties.
pub fn interval_score(dist: &FittedDistribution, y: f64, alpha: f64) -> f64 {
    let l = dist.quantile(0.5 * alpha);
    let u = dist.quantile(1.0 - 0.5 * alpha);
    (u - l) + 2.0 / alpha * (l - y).max(0.0) + 2.0 / alpha * (y - u).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub mace: f64,
    pub sharpness: f64,
}

/// Mean absolute coverage error of central intervals over the 19-level grid,
/// and mean predicted standard deviation.
pub fn calibration_diagnostics(dists: &[FittedDistribution], ys: &[f64]) -> Result<Calibration> {
    if dists.len() != ys.len() {
        return Err(IbugError::invalid("distribution and outcome counts differ"));
    }
    if dists.len() < 20 {
        return Err(IbugError::invalid(format!(
            "calibration diagnostics need at least 20 instances, got {}",
            dists.len()
        )));
    }
    let m = ys.len() as f64;
    let levels = default_levels();
    let mut coverage = vec![0usize; levels.len()];
    for (d, &y) in dists.iter().zip(ys) {
        for (c, &p) in coverage.iter_mut().zip(&levels) {
            let l = d.quantile(0.5 - 0.5 * p);
            let u = d.quantile(0.5 + 0.5 * p);
            if l <= y && y <= u {
                *c += 1;
            }
        }
    }
    let mace = coverage
        .iter()
        .zip(&levels)
        .map(|(&c, &p)| (c as f64 / m - p).abs())
        .sum::<f64>()
        / levels.len() as f64;
    let sharpness = dists.iter().map(|d| d.sd()).sum::<f64>() / m;
    Ok(Calibration { mace, sharpness })
}

pub fn rmse(preds: &[f64], ys: &[f64]) -> Result<f64> {
    if preds.len() != ys.len() {
        return Err(IbugError::invalid(format!(
            "{} predictions for {} outcomes",
            preds.len(),
            ys.len()
        )));
    }
    if preds.is_empty() {
        return Err(IbugError::invalid("rmse of an empty set"));
    }
    let sse: f64 = preds.iter().zip(ys).map(|(p, y)| (y - p).powi(2)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal() -> FittedDistribution {
        FittedDistribution::Normal { mean: 0.0, sd: 1.0 }
    }

    #[test]
    fn nll_reference_values() {
        assert!((nll(&std_normal(), 0.0) - 0.918_938_533_204_672_7).abs() < 1e-12);
        let lap = FittedDistribution::Laplace { loc: 0.0, scale: 1.0 };
        assert!((nll(&lap, 0.0) - 2f64.ln()).abs() < 1e-12);
        assert!(nll(&std_normal(), 1e6).is_finite());
    }

    #[test]
    fn crps_standard_normal_at_zero() {
        let want = (2f64.sqrt() - 1.0) / PI.sqrt();
        assert!((crps(&std_normal(), 0.0).unwrap() - want).abs() < 1e-14);
        assert!((crps_quadrature(&std_normal(), 0.0).unwrap() - want).abs() < 1e-5);
    }

    #[test]
    fn crps_far_outcome_is_distance_minus_spread() {
        let v = crps_quadrature(&std_normal(), 50.0).unwrap();
        assert!((v - crps_normal(0.0, 1.0, 50.0)).abs() < 1e-5);
    }

    #[test]
    fn check_and_interval() {
        let d = std_normal();
        assert!(check_score(&d, 0.0, &[0.5]).abs() < 1e-12);
        let q95 = d.quantile(0.95);
        assert!((check_score(&d, 0.0, &[0.95]) - 0.05 * q95).abs() < 1e-12);
        let (l, u) = (d.quantile(0.05), d.quantile(0.95));
        assert!((interval_score(&d, 0.3, 0.1) - (u - l)).abs() < 1e-12);
        assert!((interval_score(&d, u + 1.0, 0.1) - (u - l + 20.0)).abs() < 1e-9);
    }

    #[test]
    fn rmse_arithmetic() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn calibration_needs_twenty() {
        let d = vec![std_normal(); 19];
        assert!(calibration_diagnostics(&d, &[0.0; 19]).is_err());
        let d = vec![FittedDistribution::Normal { mean: 0.0, sd: 2.5 }; 20];
        let c = calibration_diagnostics(&d, &[0.0; 20]).unwrap();
        assert_eq!(c.sharpness, 2.5);
    }

    #[test]
    fn summary_stats() {
        let s = ScoreSummary::new("nll", vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rule_tags() {
        assert_eq!("crps".parse::<ScoringRule>().unwrap(), ScoringRule::Crps);
        assert!("mae".parse::<ScoringRule>().is_err());
        assert_eq!(ScoringRule::Nll.to_string(), "nll");
    }
}
