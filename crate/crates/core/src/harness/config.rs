//! Run options shared by the command line and JSON config files.
//!
//! Every flag has a config-file key of the same name (with `_` for `-`).
//! Flags given on the command line win over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use super::cv::{Method, Protocol};
use super::synthetic::ScenarioName;
use crate::affinity::{TreeSampling, TreeSubset};
use crate::error::{IbugError, Result};
use crate::gbrt::TrainConfig;
use crate::metrics::ScoringRule;
use crate::posterior::DistributionFamily;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "IBUG_THREADS";

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// JSON file with defaults for any of these options
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Training CSV
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation CSV
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// CSV of rows to predict or probe
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Target column name [default: y]
    #[arg(long)]
    pub target: Option<String>,
    /// Packaged synthetic scenario used instead of --data
    #[arg(long)]
    pub scenario: Option<ScenarioName>,
    #[arg(long)]
    pub scenario_seed: Option<u64>,

    /// Model file (native JSON, LightGBM text or XGBoost JSON)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// lightgbm-text, xgboost-json or native-json [default: from the file]
    #[arg(long)]
    pub model_format: Option<String>,
    /// Leaf index cache file
    #[arg(long)]
    pub index: Option<PathBuf>,

    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// 0 means unlimited
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_leaf_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub subsample: Option<f64>,
    #[arg(long)]
    pub train_seed: Option<u64>,

    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub family: Option<DistributionFamily>,
    /// Number of trees used for affinities
    #[arg(long)]
    pub tau: Option<usize>,
    /// all, random, first or last
    #[arg(long)]
    pub tree_sample: Option<TreeSampling>,
    /// Seed for random tree sampling and for cross-validation splits
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tune report whose chosen values fill unset posterior options
    #[arg(long)]
    pub tune_report: Option<PathBuf>,

    /// nll or crps
    #[arg(long)]
    pub metric: Option<ScoringRule>,
    /// Comma-separated family list for selection
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<DistributionFamily>>,
    /// Comma-separated k candidates
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,

    /// ibug-native, ibug-external-model or knn-baseline
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Comma-separated tau values for the timing benchmark
    #[arg(long, value_delimiter = ',')]
    pub tau_grid: Option<Vec<usize>>,

    /// Main output file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-instance scores CSV
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Summary JSON
    #[arg(long)]
    pub summary_out: Option<PathBuf>,

    /// Worker threads; overrides the IBUG_THREADS variable
    #[arg(long)]
    pub threads: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field; } )*
    };
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        serde_json::from_slice(&bytes).map_err(|e| {
            IbugError::Parse {
                location: format!("line {}, column {}", e.line(), e.column()),
                message: e.to_string(),
            }
        })
    }

    /// Fills every unset option from `file`.
    pub fn or(mut self, file: RunConfig) -> Self {
        overlay!(
            self, file, data, val, input, target, scenario, scenario_seed, model, model_format, index, n_trees,
            learning_rate, max_depth, min_leaf_size, lambda, subsample, train_seed, k, rho, gamma, delta, family, tau,
            tree_sample, seed, tune_report, metric, families, k_grid, method, folds, val_fraction, tau_grid, out,
            scores_out, summary_out, threads,
        );
        self
    }

    /// Applies `--config` when given.
    pub fn resolve(self) -> Result<Self> {
        match &self.config {
            Some(path) => {
                let file = RunConfig::load(path)?;
                Ok(self.or(file))
            }
            None => Ok(self),
        }
    }

    pub fn target(&self) -> &str {
        self.target.as_deref().unwrap_or("y")
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            n_trees: self.n_trees.unwrap_or(d.n_trees),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            max_depth: match self.max_depth {
                Some(0) => None,
                Some(v) => Some(v),
                None => d.max_depth,
            },
            min_leaf_size: self.min_leaf_size.unwrap_or(d.min_leaf_size),
            lambda: self.lambda.unwrap_or(d.lambda),
            subsample_fraction: self.subsample.unwrap_or(d.subsample_fraction),
            seed: self.train_seed.unwrap_or(d.seed),
        }
    }

    pub fn tree_subset(&self, n_trees: usize) -> TreeSubset {
        TreeSubset {
            strategy: self.tree_sample.unwrap_or_default(),
            tau: self.tau.unwrap_or(n_trees),
            seed: self.seed.unwrap_or(0),
        }
    }

    pub fn protocol(&self) -> Protocol {
        let d = Protocol::default();
        let n_folds = self.folds.unwrap_or(d.n_folds);
        Protocol {
            n_folds,
            test_fraction: 1.0 / n_folds as f64,
            val_fraction: self.val_fraction.unwrap_or(d.val_fraction),
            seed: self.seed.unwrap_or(d.seed),
            metric: self.metric.unwrap_or(d.metric),
        }
    }

    /// Thread count from the option or the environment; `None` leaves the
    /// pool at its default.
    pub fn thread_count(&self) -> Result<Option<usize>> {
        if let Some(n) = self.threads {
            return Ok(Some(n));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|_| IbugError::invalid(format!("{THREADS_ENV}='{v}' is not a thread count"))),
            Err(_) => Ok(None),
        }
    }
}
