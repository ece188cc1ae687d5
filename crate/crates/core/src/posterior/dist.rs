//! Fitted univariate distributions with pdf / cdf / quantile evaluation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde_json::{json, Value};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma, ln_gamma};

use super::DistributionFamily;
use crate::numeric::{
    invert_cdf, owens_t, std_normal_cdf, std_normal_ln_cdf, std_normal_pdf, std_normal_quantile,
    LN_SQRT_2PI,
};

/// Euler–Mascheroni constant (mean offset of the Gumbel distribution).
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq)]
pub enum FittedDistribution {
    Normal { mean: f64, sd: f64 },
    /// Azzalini skew normal with location `xi`, scale `omega`, shape `alpha`.
    SkewNormal { xi: f64, omega: f64, alpha: f64 },
    /// `shift + exp(N(mu_log, sigma_log²))`.
    LogNormal { shift: f64, mu_log: f64, sigma_log: f64 },
    Laplace { loc: f64, scale: f64 },
    StudentT { loc: f64, scale: f64, df: f64 },
    Logistic { loc: f64, scale: f64 },
    /// Right-skewed (maximum) Gumbel; `loc` is the mode.
    Gumbel { loc: f64, scale: f64 },
    /// `shift + Weibull(shape, scale)`.
    Weibull { shift: f64, shape: f64, scale: f64 },
    /// Equal-weight Gaussian mixture centred on `centers`.
    Kde { centers: Vec<f64>, bandwidth: f64 },
}

impl FittedDistribution {
    pub fn family(&self) -> DistributionFamily {
        match self {
            FittedDistribution::Normal { .. } => DistributionFamily::Normal,
            FittedDistribution::SkewNormal { .. } => DistributionFamily::Skewnormal,
            FittedDistribution::LogNormal { .. } => DistributionFamily::Lognormal,
            FittedDistribution::Laplace { .. } => DistributionFamily::Laplace,
            FittedDistribution::StudentT { .. } => DistributionFamily::StudentT,
            FittedDistribution::Logistic { .. } => DistributionFamily::Logistic,
            FittedDistribution::Gumbel { .. } => DistributionFamily::Gumbel,
            FittedDistribution::Weibull { .. } => DistributionFamily::Weibull,
            FittedDistribution::Kde { .. } => DistributionFamily::Kde,
        }
    }

    /// Parameters as a JSON object, for prediction records.
    pub fn params(&self) -> Value {
        match self {
            FittedDistribution::Normal { mean, sd } => json!({"mean": mean, "sd": sd}),
            FittedDistribution::SkewNormal { xi, omega, alpha } => {
                json!({"loc": xi, "scale": omega, "shape": alpha})
            }
            FittedDistribution::LogNormal {
                shift,
                mu_log,
                sigma_log,
            } => json!({"shift": shift, "mu_log": mu_log, "sigma_log": sigma_log}),
            FittedDistribution::Laplace { loc, scale }
            | FittedDistribution::Logistic { loc, scale }
            | FittedDistribution::Gumbel { loc, scale } => json!({"loc": loc, "scale": scale}),
            FittedDistribution::StudentT { loc, scale, df } => {
                json!({"loc": loc, "scale": scale, "df": df})
            }
            FittedDistribution::Weibull { shift, shape, scale } => {
                json!({"shift": shift, "shape": shape, "scale": scale})
            }
            FittedDistribution::Kde { centers, bandwidth } => {
                json!({"bandwidth": bandwidth, "centers": centers})
            }
        }
    }

    /// Closed interval outside of which the density is zero.
    pub fn support(&self) -> (f64, f64) {
        match self {
            FittedDistribution::LogNormal { shift, .. } | FittedDistribution::Weibull { shift, .. } => {
                (*shift, f64::INFINITY)
            }
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            FittedDistribution::Kde { centers, bandwidth } => {
                centers
                    .iter()
                    .map(|c| std_normal_pdf((y - c) / bandwidth))
                    .sum::<f64>()
                    / (centers.len() as f64 * bandwidth)
            }
            _ => self.ln_pdf(y).exp(),
        }
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        if y.is_nan() {
            return f64::NAN;
        }
        match *self {
            FittedDistribution::Normal { mean, sd } => {
                let z = (y - mean) / sd;
                -0.5 * z * z - LN_SQRT_2PI - sd.ln()
            }
            FittedDistribution::SkewNormal { xi, omega, alpha } => {
                let z = (y - xi) / omega;
                std::f64::consts::LN_2 - 0.5 * z * z - LN_SQRT_2PI - omega.ln()
                    + std_normal_ln_cdf(alpha * z)
            }
            FittedDistribution::LogNormal {
                shift,
                mu_log,
                sigma_log,
            } => {
                let x = y - shift;
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - mu_log) / sigma_log;
                -0.5 * z * z - LN_SQRT_2PI - sigma_log.ln() - x.ln()
            }
            FittedDistribution::Laplace { loc, scale } => {
                -(y - loc).abs() / scale - (2.0 * scale).ln()
            }
            FittedDistribution::StudentT { loc, scale, df } => {
                let t = (y - loc) / scale;
                ln_gamma(0.5 * (df + 1.0))
                    - ln_gamma(0.5 * df)
                    - 0.5 * (df * PI).ln()
                    - scale.ln()
                    - 0.5 * (df + 1.0) * (t * t / df).ln_1p()
            }
            FittedDistribution::Logistic { loc, scale } => {
                let z = -((y - loc) / scale).abs();
                z - 2.0 * z.exp().ln_1p() - scale.ln()
            }
            FittedDistribution::Gumbel { loc, scale } => {
                let z = (y - loc) / scale;
                -z - (-z).exp() - scale.ln()
            }
            FittedDistribution::Weibull { shift, shape, scale } => {
                let x = y - shift;
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let r = x / scale;
                (shape / scale).ln() + (shape - 1.0) * r.ln() - r.powf(shape)
            }
            FittedDistribution::Kde { .. } => self.pdf(y).ln(),
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            FittedDistribution::Normal { mean, sd } => std_normal_cdf((y - mean) / sd),
            FittedDistribution::SkewNormal { xi, omega, alpha } => {
                let z = (y - xi) / omega;
                (std_normal_cdf(z) - 2.0 * owens_t(z, *alpha)).clamp(0.0, 1.0)
            }
            FittedDistribution::LogNormal {
                shift,
                mu_log,
                sigma_log,
            } => {
                let x = y - shift;
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - mu_log) / sigma_log)
                }
            }
            FittedDistribution::Laplace { loc, scale } => {
                let z = (y - loc) / scale;
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            FittedDistribution::StudentT { loc, scale, df } => {
                let t = (y - loc) / scale;
                if t.is_infinite() {
                    return if t > 0.0 { 1.0 } else { 0.0 };
                }
                let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + t * t));
                if t > 0.0 {
                    1.0 - tail
                } else {
                    tail
                }
            }
            FittedDistribution::Logistic { loc, scale } => 1.0 / (1.0 + (-(y - loc) / scale).exp()),
            FittedDistribution::Gumbel { loc, scale } => (-(-(y - loc) / scale).exp()).exp(),
            FittedDistribution::Weibull { shift, shape, scale } => {
                let x = y - shift;
                if x <= 0.0 {
                    0.0
                } else {
                    -(-(x / scale).powf(*shape)).exp_m1()
                }
            }
            FittedDistribution::Kde { centers, bandwidth } => {
                centers
                    .iter()
                    .map(|c| 0.5 * libm::erfc(-(y - c) / bandwidth * FRAC_1_SQRT_2))
                    .sum::<f64>()
                    / centers.len() as f64
            }
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return self.support().0;
        }
        if p >= 1.0 {
            return self.support().1;
        }
        match self {
            FittedDistribution::Normal { mean, sd } => mean + sd * std_normal_quantile(p),
            FittedDistribution::LogNormal {
                shift,
                mu_log,
                sigma_log,
            } => shift + (mu_log + sigma_log * std_normal_quantile(p)).exp(),
            FittedDistribution::Laplace { loc, scale } => {
                if p < 0.5 {
                    loc + scale * (2.0 * p).ln()
                } else {
                    loc - scale * (2.0 * (1.0 - p)).ln()
                }
            }
            FittedDistribution::Logistic { loc, scale } => loc + scale * (p / (1.0 - p)).ln(),
            FittedDistribution::Gumbel { loc, scale } => loc - scale * (-p.ln()).ln(),
            FittedDistribution::Weibull { shift, shape, scale } => {
                shift + scale * (-(-p).ln_1p()).powf(1.0 / shape)
            }
            FittedDistribution::SkewNormal { .. }
            | FittedDistribution::StudentT { .. }
            | FittedDistribution::Kde { .. } => {
                let mean = self.mean();
                let spread = self.variance().sqrt();
                invert_cdf(|y| self.cdf(y), |y| self.pdf(y), p, mean, spread)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            FittedDistribution::Normal { mean, .. } => *mean,
            FittedDistribution::SkewNormal { xi, omega, alpha } => {
                let delta = alpha / (1.0 + alpha * alpha).sqrt();
                xi + omega * delta * (2.0 / PI).sqrt()
            }
            FittedDistribution::LogNormal {
                shift,
                mu_log,
                sigma_log,
            } => shift + (mu_log + 0.5 * sigma_log * sigma_log).exp(),
            FittedDistribution::Laplace { loc, .. }
            | FittedDistribution::StudentT { loc, .. }
            | FittedDistribution::Logistic { loc, .. } => *loc,
            FittedDistribution::Gumbel { loc, scale } => loc + scale * EULER_GAMMA,
            FittedDistribution::Weibull { shift, shape, scale } => shift + scale * gamma(1.0 + 1.0 / shape),
            FittedDistribution::Kde { centers, .. } => centers.iter().sum::<f64>() / centers.len() as f64,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            FittedDistribution::Normal { sd, .. } => sd * sd,
            FittedDistribution::SkewNormal { omega, alpha, .. } => {
                let delta2 = alpha * alpha / (1.0 + alpha * alpha);
                omega * omega * (1.0 - 2.0 * delta2 / PI)
            }
            FittedDistribution::LogNormal { mu_log, sigma_log, .. } => {
                let s2 = sigma_log * sigma_log;
                s2.exp_m1() * (2.0 * mu_log + s2).exp()
            }
            FittedDistribution::Laplace { scale, .. } => 2.0 * scale * scale,
            FittedDistribution::StudentT { scale, df, .. } => scale * scale * df / (df - 2.0),
            FittedDistribution::Logistic { scale, .. } => (PI * scale).powi(2) / 3.0,
            FittedDistribution::Gumbel { scale, .. } => (PI * scale).powi(2) / 6.0,
            FittedDistribution::Weibull { shape, scale, .. } => {
                let g1 = gamma(1.0 + 1.0 / shape);
                scale * scale * (gamma(1.0 + 2.0 / shape) - g1 * g1)
            }
            FittedDistribution::Kde { centers, bandwidth } => {
                let m = self.mean();
                let spread = centers.iter().map(|c| (c - m).powi(2)).sum::<f64>() / centers.len() as f64;
                bandwidth * bandwidth + spread
            }
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }
}
