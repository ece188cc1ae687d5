//! Fitting an output distribution to a neighborhood.
//!
//! Location-scale families take their mean from the point model and their
//! spread from the calibrated variance. Student-t and skew normal keep that
//! mean/variance pair fixed and fit their shape by maximum likelihood.
//! Log-normal and Weibull are fit entirely to the neighbor targets.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use super::dist::{FittedDistribution, EULER_GAMMA};
use super::DistributionFamily;
use crate::error::{IbugError, Result};
use crate::numeric::nelder_mead;

pub const MLE_MAX_ITER: usize = 500;
pub const MLE_REL_TOL: f64 = 1e-8;
/// Lower bound on Student-t degrees of freedom, so the variance exists.
pub const MIN_STUDENT_DF: f64 = 2.01;
pub const MAX_STUDENT_DF: f64 = 1000.0;
/// Skew-normal shape is searched in `[-MAX_SKEW, MAX_SKEW]`.
pub const MAX_SKEW: f64 = 50.0;

pub fn fit_distribution(
    family: DistributionFamily,
    targets: &[f64],
    mu: f64,
    sigma2: f64,
) -> Result<FittedDistribution> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(IbugError::invalid(format!("variance must be positive, got {sigma2}")));
    }
    if !mu.is_finite() {
        return Err(IbugError::invalid("mean must be finite"));
    }
    if targets.is_empty() {
        return Err(IbugError::invalid("no neighbor targets"));
    }
    let sd = sigma2.sqrt();
    Ok(match family {
        DistributionFamily::Normal => FittedDistribution::Normal { mean: mu, sd },
        DistributionFamily::Laplace => FittedDistribution::Laplace {
            loc: mu,
            scale: (0.5 * sigma2).sqrt(),
        },
        DistributionFamily::Logistic => FittedDistribution::Logistic {
            loc: mu,
            scale: (3.0 * sigma2).sqrt() / PI,
        },
        DistributionFamily::Gumbel => {
            let scale = (6.0 * sigma2).sqrt() / PI;
            FittedDistribution::Gumbel {
                loc: mu - scale * EULER_GAMMA,
                scale,
            }
        }
        DistributionFamily::StudentT => fit_student_t(targets, mu, sigma2)?,
        DistributionFamily::Skewnormal => fit_skewnormal(targets, mu, sigma2)?,
        DistributionFamily::Lognormal => fit_lognormal(targets)?,
        DistributionFamily::Weibull => fit_weibull(targets)?,
        DistributionFamily::Kde => fit_kde(targets, mu, sigma2),
    })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn central_moment(xs: &[f64], m: f64, order: i32) -> f64 {
    xs.iter().map(|x| (x - m).powi(order)).sum::<f64>() / xs.len() as f64
}

fn student_t(mu: f64, sigma2: f64, df: f64) -> FittedDistribution {
    FittedDistribution::StudentT {
        loc: mu,
        scale: (sigma2 * (df - 2.0) / df).sqrt(),
        df,
    }
}

fn student_df(u: f64) -> f64 {
    (MIN_STUDENT_DF + u.exp()).min(MAX_STUDENT_DF)
}

fn fit_student_t(targets: &[f64], mu: f64, sigma2: f64) -> Result<FittedDistribution> {
    let nll = |u: &[f64]| -> f64 {
        let d = student_t(mu, sigma2, student_df(u[0]));
        -targets.iter().map(|&y| d.ln_pdf(y)).sum::<f64>()
    };
    // moment start: excess kurtosis 6 / (df - 4)
    let m = mean(targets);
    let m2 = central_moment(targets, m, 2);
    let kurt = if m2 > 0.0 {
        central_moment(targets, m, 4) / (m2 * m2) - 3.0
    } else {
        0.0
    };
    let df0 = if kurt > 0.0 { 4.0 + 6.0 / kurt } else { 30.0 };
    let u0 = (df0.min(MAX_STUDENT_DF) - MIN_STUDENT_DF).max(1e-3).ln();
    let best = nelder_mead(nll, &[u0], &[0.5], MLE_MAX_ITER, MLE_REL_TOL)?;
    Ok(student_t(mu, sigma2, student_df(best.x[0])))
}

fn skewnormal(mu: f64, sigma2: f64, alpha: f64) -> FittedDistribution {
    let delta = alpha / (1.0 + alpha * alpha).sqrt();
    let omega = (sigma2 / (1.0 - 2.0 * delta * delta / PI)).sqrt();
    FittedDistribution::SkewNormal {
        xi: mu - omega * delta * (2.0 / PI).sqrt(),
        omega,
        alpha,
    }
}

fn fit_skewnormal(targets: &[f64], mu: f64, sigma2: f64) -> Result<FittedDistribution> {
    let nll = |a: &[f64]| -> f64 {
        let d = skewnormal(mu, sigma2, a[0].clamp(-MAX_SKEW, MAX_SKEW));
        -targets.iter().map(|&y| d.ln_pdf(y)).sum::<f64>()
    };
    // method-of-moments start from sample skewness
    let m = mean(targets);
    let m2 = central_moment(targets, m, 2);
    let skew = if m2 > 0.0 {
        (central_moment(targets, m, 3) / m2.powf(1.5)).clamp(-0.99, 0.99)
    } else {
        0.0
    };
    let c = (2.0 * skew.abs() / (4.0 - PI)).powf(2.0 / 3.0);
    let delta = (PI / 2.0 * c / (1.0 + c)).sqrt().min(0.99) * skew.signum();
    let alpha0 = delta / (1.0 - delta * delta).sqrt();
    let best = nelder_mead(nll, &[alpha0], &[0.5], MLE_MAX_ITER, MLE_REL_TOL)?;
    Ok(skewnormal(mu, sigma2, best.x[0].clamp(-MAX_SKEW, MAX_SKEW)))
}

/// Shift that makes every target strictly positive: zero when already
/// positive, otherwise `min - 1e-6 * range`.
pub fn positive_shift(targets: &[f64]) -> Result<f64> {
    let min = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let max = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min > 0.0 {
        return Ok(0.0);
    }
    let range = max - min;
    if range <= 0.0 {
        return Err(IbugError::fit("cannot shift a constant non-positive sample onto (0, inf)"));
    }
    Ok(min - 1e-6 * range)
}

fn fit_lognormal(targets: &[f64]) -> Result<FittedDistribution> {
    let shift = positive_shift(targets)?;
    // closed-form maximum likelihood on the log scale
    let logs: Vec<f64> = targets.iter().map(|y| (y - shift).ln()).collect();
    let mu_log = mean(&logs);
    let sigma_log = central_moment(&logs, mu_log, 2).sqrt();
    if !(sigma_log > 0.0 && sigma_log.is_finite()) {
        return Err(IbugError::fit("log-normal fit needs at least two distinct targets"));
    }
    Ok(FittedDistribution::LogNormal {
        shift,
        mu_log,
        sigma_log,
    })
}

fn fit_weibull(targets: &[f64]) -> Result<FittedDistribution> {
    let shift = positive_shift(targets)?;
    let xs: Vec<f64> = targets.iter().map(|y| y - shift).collect();
    let m = mean(&xs);
    let var = central_moment(&xs, m, 2);
    if !(var > 0.0) {
        return Err(IbugError::fit("Weibull fit needs at least two distinct targets"));
    }
    let n = xs.len() as f64;
    let sum_ln: f64 = xs.iter().map(|x| x.ln()).sum();
    let nll = |p: &[f64]| -> f64 {
        let (shape, scale) = (p[0].exp(), p[1].exp());
        let sum_pow: f64 = xs.iter().map(|x| (x / scale).powf(shape)).sum();
        -(n * (shape / scale).ln() + (shape - 1.0) * (sum_ln - n * scale.ln()) - sum_pow)
    };
    // moment estimates
    let shape0 = ((var.sqrt() / m).powf(-1.086)).clamp(0.05, 100.0);
    let scale0 = m / gamma(1.0 + 1.0 / shape0);
    let best = nelder_mead(
        nll,
        &[shape0.ln(), scale0.ln()],
        &[0.2, 0.2],
        MLE_MAX_ITER,
        MLE_REL_TOL,
    )
    .map_err(|e| match e {
        IbugError::Fit {
            message,
            last_iterate,
        } => IbugError::Fit {
            message,
            last_iterate: last_iterate.iter().map(|v| v.exp()).collect(),
        },
        other => other,
    })?;
    Ok(FittedDistribution::Weibull {
        shift,
        shape: best.x[0].exp(),
        scale: best.x[1].exp(),
    })
}

/// Linear-interpolation sample quantile of sorted data.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 · min(sd, IQR / 1.34) · k^(-1/5)`. When one spread
/// measure is zero the other is used; when both are, the calibrated standard
/// deviation stands in.
pub fn silverman_bandwidth(targets: &[f64], sigma2: f64) -> f64 {
    let k = targets.len() as f64;
    let m = mean(targets);
    let sd = if targets.len() > 1 {
        (targets.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = sorted_quantile(&sorted, 0.75) - sorted_quantile(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => sigma2.sqrt(),
    };
    0.9 * spread * k.powf(-0.2)
}

fn fit_kde(targets: &[f64], mu: f64, sigma2: f64) -> FittedDistribution {
    let offset = mu - mean(targets);
    FittedDistribution::Kde {
        centers: targets.iter().map(|y| y + offset).collect(),
        bandwidth: silverman_bandwidth(targets, sigma2),
    }
}
