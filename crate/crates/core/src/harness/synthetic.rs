//! Packaged synthetic scenarios.
//!
//! Inputs are independent `U[0, 1]`. The signal is the Friedman form
//! `10 sin(π x₀ x₁) + 20 (x₂ − 0.5)² + 10 x₃ + 5 x₄`; remaining features are
//! pure noise. The heteroscedastic noise has sd `0.5 + |x₀|`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{IbugError, Result};
use crate::gbrt::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Gaussian with sd `0.5 + |x₀|`.
    Heteroscedastic,
    /// Standard Gaussian.
    Gaussian,
    /// Student-t with 3 degrees of freedom.
    StudentT3,
}

impl NoiseKind {
    pub fn sd(&self, x: &[f64]) -> f64 {
        match self {
            NoiseKind::Heteroscedastic => 0.5 + x[0].abs(),
            NoiseKind::Gaussian => 1.0,
            NoiseKind::StudentT3 => 3f64.sqrt(),
        }
    }
}

pub fn friedman_signal(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    Heteroscedastic,
    Gaussian,
    StudentT,
    DenseLeaf,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::Heteroscedastic,
        ScenarioName::Gaussian,
        ScenarioName::StudentT,
        ScenarioName::DenseLeaf,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Heteroscedastic => "heteroscedastic",
            ScenarioName::Gaussian => "gaussian",
            ScenarioName::StudentT => "student-t",
            ScenarioName::DenseLeaf => "dense-leaf",
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = IbugError;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| IbugError::invalid(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: ScenarioName,
    pub noise: NoiseKind,
    pub n_rows: usize,
    pub n_features: usize,
    pub train: TrainConfig,
}

/// A generated dataset together with the true noise sd of every row.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub data: Dataset,
    pub noise_sd: Vec<f64>,
}

impl Scenario {
    pub fn new(name: ScenarioName) -> Self {
        let train = TrainConfig {
            n_trees: 200,
            learning_rate: 0.1,
            max_depth: Some(4),
            min_leaf_size: 5,
            ..TrainConfig::default()
        };
        let (noise, n_rows) = match name {
            ScenarioName::Heteroscedastic => (NoiseKind::Heteroscedastic, 5000),
            ScenarioName::Gaussian => (NoiseKind::Gaussian, 2000),
            ScenarioName::StudentT => (NoiseKind::StudentT3, 2000),
            ScenarioName::DenseLeaf => (NoiseKind::Heteroscedastic, 10_000),
        };
        let train = if name == ScenarioName::DenseLeaf {
            TrainConfig {
                n_trees: 500,
                max_depth: Some(2),
                min_leaf_size: 1,
                ..train
            }
        } else {
            train
        };
        Scenario {
            name,
            noise,
            n_rows,
            n_features: 10,
            train,
        }
    }

    pub fn packaged() -> Vec<Scenario> {
        ScenarioName::ALL.into_iter().map(Scenario::new).collect()
    }

    pub fn generate(&self, seed: u64) -> Result<SyntheticData> {
        if self.n_features < 5 {
            return Err(IbugError::invalid("synthetic scenarios need at least 5 features"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t3 = StudentT::new(3.0).expect("valid degrees of freedom");
        let p = self.n_features;
        let mut features = Vec::with_capacity(self.n_rows * p);
        let mut targets = Vec::with_capacity(self.n_rows);
        let mut noise_sd = Vec::with_capacity(self.n_rows);
        for _ in 0..self.n_rows {
            let x: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let e: f64 = match self.noise {
                NoiseKind::StudentT3 => t3.sample(&mut rng),
                _ => StandardNormal.sample(&mut rng),
            };
            let sd = self.noise.sd(&x);
            let scale = if self.noise == NoiseKind::StudentT3 { 1.0 } else { sd };
            targets.push(friedman_signal(&x) + scale * e);
            noise_sd.push(sd);
            features.extend(x);
        }
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let data = Dataset::from_flat(features, p, targets)?.with_feature_names(names)?;
        Ok(SyntheticData { data, noise_sd })
    }
}
