//! Cross-validation protocol: outer train/test folds, an inner
//! train/validation split for tuning, refit on the full training part, then
//! scoring on the held-out fold.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{knn_baseline, KnnBaselineConfig, KnnGrid};
use crate::affinity::{compute_affinities, top_k};
use crate::dataset::Dataset;
use crate::error::{IbugError, Result};
use crate::gbrt::{train, Ensemble, TrainConfig};
use crate::leaf_index::LeafIndex;
use crate::metrics::{
    calibration_diagnostics, check_score, crps, default_levels, interval_score, nll, rmse, ScoreSummary,
    ScoringRule, DEFAULT_INTERVAL_ALPHA,
};
use crate::posterior::{calibrate_variance, fit_distribution, raw_variance, FittedDistribution, PosteriorConfig};
use crate::tuning::{tune, CandidateGrids};

pub const SUMMARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Protocol {
    pub n_folds: usize,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub metric: ScoringRule,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            n_folds: 10,
            test_fraction: 0.1,
            val_fraction: 0.2,
            seed: 0,
            metric: ScoringRule::Nll,
        }
    }
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_folds < 2 {
            return Err(IbugError::invalid("at least 2 folds are needed"));
        }
        for (name, f) in [("test_fraction", self.test_fraction), ("val_fraction", self.val_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(IbugError::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        // folds partition the data, so each test part is 1/n_folds of it
        if (self.test_fraction * self.n_folds as f64 - 1.0).abs() > 1e-9 {
            return Err(IbugError::invalid(format!(
                "test_fraction {} does not match {} folds",
                self.test_fraction, self.n_folds
            )));
        }
        Ok(())
    }
}

fn fold_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffles `0..n` and cuts it into `n_folds` parts whose sizes differ by at
/// most one. Each part is returned sorted.
pub fn fold_partition(n: usize, n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 || n < n_folds {
        return Err(IbugError::invalid(format!("cannot cut {n} rows into {n_folds} folds")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut fold_rng(seed, 0));
    let (base, extra) = (n / n_folds, n % n_folds);
    let mut out = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let len = base + usize::from(f < extra);
        let mut part = ids[start..start + len].to_vec();
        part.sort_unstable();
        out.push(part);
        start += len;
    }
    Ok(out)
}

/// Splits a fold's training ids into (inner train, validation) with a seed
/// derived from the fold id.
pub fn inner_split(train_ids: &[usize], val_fraction: f64, seed: u64, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = train_ids.len();
    if n < 4 {
        return Err(IbugError::invalid("too few training rows for a validation split"));
    }
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 2);
    let mut ids = train_ids.to_vec();
    ids.shuffle(&mut fold_rng(seed, fold as u64 + 1));
    let mut val = ids[..n_val].to_vec();
    let mut inner = ids[n_val..].to_vec();
    val.sort_unstable();
    inner.sort_unstable();
    Ok((inner, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    IbugNative,
    IbugExternalModel,
    KnnBaseline,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::IbugNative => "ibug-native",
            Method::IbugExternalModel => "ibug-external-model",
            Method::KnnBaseline => "knn-baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = IbugError;

    fn from_str(s: &str) -> Result<Self> {
        [Method::IbugNative, Method::IbugExternalModel, Method::KnnBaseline]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| IbugError::invalid(format!("unknown method '{s}'")))
    }
}

/// Everything a fold needs besides the data and the protocol.
#[derive(Debug, Clone, Default)]
pub struct CvSetup {
    /// Trainer settings for the native method and for the kNN feature ranking.
    pub train: TrainConfig,
    /// Point model for [`Method::IbugExternalModel`]; it is never refit.
    pub external_model: Option<Ensemble>,
    /// Overrides the standard kNN grids.
    pub knn_grid: Option<KnnGrid>,
}

/// Held-out predictions and scores of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub test_ids: Vec<usize>,
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub dists: Vec<FittedDistribution>,
    pub nll: Vec<f64>,
    pub crps: Vec<f64>,
    pub check: Vec<f64>,
    pub interval: Vec<f64>,
    pub rmse: f64,
    /// `None` when the fold has fewer than 20 test rows.
    pub mace: Option<f64>,
    pub sharpness: f64,
    /// Mean validation NLL of the chosen configuration.
    pub val_nll: f64,
    pub ibug: Option<PosteriorConfig>,
    pub knn: Option<KnnBaselineConfig>,
    /// Test rows where the chosen family failed to fit and a normal with the
    /// same mean and variance was used instead.
    pub fallbacks: usize,
}

/// Posterior for one row, falling back to a normal when the family fit fails.
fn posterior_or_normal(
    x: &[f64],
    model: &Ensemble,
    index: &LeafIndex,
    trees: &[usize],
    cfg: &PosteriorConfig,
) -> Result<(f64, FittedDistribution, bool)> {
    let mu = model.predict(x)?;
    let aff = compute_affinities(x, model, index, trees)?;
    let neighbors = top_k(&aff, cfg.k, index.targets())?;
    let sigma2 = calibrate_variance(raw_variance(&neighbors, cfg.rho)?, cfg.gamma, cfg.delta)?;
    match fit_distribution(cfg.family, &neighbors.targets, mu, sigma2) {
        Ok(d) => Ok((mu, d, false)),
        Err(IbugError::Fit { .. }) => Ok((mu, FittedDistribution::Normal { mean: mu, sd: sigma2.sqrt() }, true)),
        Err(e) => Err(e),
    }
}

struct Ibug {
    mu: Vec<f64>,
    dists: Vec<FittedDistribution>,
    fallbacks: usize,
    val_nll: f64,
    config: PosteriorConfig,
}

fn run_ibug(
    inner: &Dataset,
    val: &Dataset,
    outer: &Dataset,
    test: &Dataset,
    grids: &CandidateGrids,
    model_for: &dyn Fn(&Dataset) -> Result<Ensemble>,
) -> Result<Ibug> {
    let model = model_for(inner)?;
    let index = LeafIndex::build(&model, inner)?;
    let trees: Vec<usize> = (0..model.n_trees()).collect();
    let grids = CandidateGrids {
        k_grid: grids.k_grid.iter().copied().filter(|&k| k <= inner.n_rows()).collect(),
        ..grids.clone()
    };
    let tuned = tune(val, &model, &index, &trees, &grids)?;
    let config = tuned.config;
    let val_nll = tuned
        .families
        .iter()
        .find(|f| f.family == config.family)
        .map(|f| f.mean)
        .expect("chosen family is in the table");

    let model = model_for(outer)?;
    let index = LeafIndex::build(&model, outer)?;
    let trees: Vec<usize> = (0..model.n_trees()).collect();
    let per: Vec<Result<(f64, FittedDistribution, bool)>> = (0..test.n_rows())
        .into_par_iter()
        .map(|i| posterior_or_normal(test.row(i), &model, &index, &trees, &config))
        .collect();
    let mut out = Ibug {
        mu: Vec::with_capacity(per.len()),
        dists: Vec::with_capacity(per.len()),
        fallbacks: 0,
        val_nll,
        config,
    };
    for p in per {
        let (mu, d, fell_back) = p?;
        out.mu.push(mu);
        out.dists.push(d);
        out.fallbacks += usize::from(fell_back);
    }
    Ok(out)
}

/// Runs one fold end to end.
pub fn run_fold(
    data: &Dataset,
    protocol: &Protocol,
    fold: usize,
    method: Method,
    grids: &CandidateGrids,
    setup: &CvSetup,
) -> Result<FoldResult> {
    protocol.validate()?;
    let folds = fold_partition(data.n_rows(), protocol.n_folds, protocol.seed)?;
    let test_ids = folds
        .get(fold)
        .ok_or_else(|| IbugError::invalid(format!("fold {fold} out of range")))?
        .clone();
    run_fold_on(data, protocol, fold, &test_ids, method, grids, setup)
}

fn run_fold_on(
    data: &Dataset,
    protocol: &Protocol,
    fold: usize,
    test_ids: &[usize],
    method: Method,
    grids: &CandidateGrids,
    setup: &CvSetup,
) -> Result<FoldResult> {
    let mut is_test = vec![false; data.n_rows()];
    for &i in test_ids {
        is_test[i] = true;
    }
    let outer_ids: Vec<usize> = (0..data.n_rows()).filter(|&i| !is_test[i]).collect();
    let (inner_ids, val_ids) = inner_split(&outer_ids, protocol.val_fraction, protocol.seed, fold)?;
    let (inner, val, outer, test) = (
        data.subset(&inner_ids),
        data.subset(&val_ids),
        data.subset(&outer_ids),
        data.subset(test_ids),
    );
    let train_cfg = TrainConfig {
        seed: protocol.seed.wrapping_add(fold as u64),
        ..setup.train.clone()
    };
    let grids = CandidateGrids {
        metric: protocol.metric,
        ..grids.clone()
    };

    let (mu, dists, fallbacks, val_nll, ibug, knn) = match method {
        Method::IbugNative => {
            let r = run_ibug(&inner, &val, &outer, &test, &grids, &|d| train(d, &train_cfg))?;
            (r.mu, r.dists, r.fallbacks, r.val_nll, Some(r.config), None)
        }
        Method::IbugExternalModel => {
            let model = setup
                .external_model
                .as_ref()
                .ok_or_else(|| IbugError::invalid("the external-model method needs a model"))?;
            let r = run_ibug(&inner, &val, &outer, &test, &grids, &|_| Ok(model.clone()))?;
            (r.mu, r.dists, r.fallbacks, r.val_nll, Some(r.config), None)
        }
        Method::KnnBaseline => {
            let grid = setup
                .knn_grid
                .clone()
                .unwrap_or_else(|| KnnGrid::standard(inner.n_rows(), inner.n_features()));
            let r = knn_baseline(&inner, &val, &test, &grid, &train_cfg)?;
            let mu = r.predictions.iter().map(|d| d.mean()).collect();
            (mu, r.predictions, 0, r.val_nll, None, Some(r.config))
        }
    };
    score_fold(fold, test_ids.to_vec(), test.targets().to_vec(), mu, dists, fallbacks, val_nll, ibug, knn)
}

#[allow(clippy::too_many_arguments)]
fn score_fold(
    fold: usize,
    test_ids: Vec<usize>,
    y: Vec<f64>,
    mu: Vec<f64>,
    dists: Vec<FittedDistribution>,
    fallbacks: usize,
    val_nll: f64,
    ibug: Option<PosteriorConfig>,
    knn: Option<KnnBaselineConfig>,
) -> Result<FoldResult> {
    let levels = default_levels();
    let per: Vec<Result<[f64; 4]>> = dists
        .par_iter()
        .zip(&y)
        .map(|(d, &t)| {
            Ok([
                nll(d, t),
                crps(d, t)?,
                check_score(d, t, &levels),
                interval_score(d, t, DEFAULT_INTERVAL_ALPHA),
            ])
        })
        .collect();
    let mut cols: [Vec<f64>; 4] = Default::default();
    for p in per {
        for (c, v) in cols.iter_mut().zip(p?) {
            c.push(v);
        }
    }
    let [nll, crps, check, interval] = cols;
    let (mace, sharpness) = match calibration_diagnostics(&dists, &y) {
        Ok(c) => (Some(c.mace), c.sharpness),
        Err(_) => (None, dists.iter().map(|d| d.sd()).sum::<f64>() / dists.len() as f64),
    };
    Ok(FoldResult {
        fold,
        rmse: rmse(&mu, &y)?,
        test_ids,
        y,
        mu,
        dists,
        nll,
        crps,
        check,
        interval,
        mace,
        sharpness,
        val_nll,
        ibug,
        knn,
        fallbacks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub method: Method,
    pub protocol: Protocol,
    pub n_rows: usize,
    pub folds: Vec<FoldResult>,
}

/// Runs every fold (in parallel) and returns them in fold order.
pub fn run_cv(
    data: &Dataset,
    protocol: &Protocol,
    method: Method,
    grids: &CandidateGrids,
    setup: &CvSetup,
) -> Result<CvResult> {
    protocol.validate()?;
    if data.n_rows() < 50 {
        return Err(IbugError::invalid(format!(
            "cross-validation needs at least 50 rows, got {}",
            data.n_rows()
        )));
    }
    let folds = fold_partition(data.n_rows(), protocol.n_folds, protocol.seed)?;
    let results: Vec<Result<FoldResult>> = folds
        .par_iter()
        .enumerate()
        .map(|(f, ids)| {
            run_fold_on(data, protocol, f, ids, method, grids, setup).map_err(|e| e.context(format!("fold {f}")))
        })
        .collect();
    Ok(CvResult {
        method,
        protocol: *protocol,
        n_rows: data.n_rows(),
        folds: results.into_iter().collect::<Result<_>>()?,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stderr: f64,
    pub folds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldChoice {
    pub fold: usize,
    pub val_nll: f64,
    pub fallbacks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ibug: Option<PosteriorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn: Option<KnnBaselineConfig>,
}

/// Summary JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub version: u32,
    pub method: Method,
    pub n_rows: usize,
    pub protocol: Protocol,
    /// Fold-level values with their mean and standard error across folds.
    pub metrics: BTreeMap<String, MetricSummary>,
    pub folds: Vec<FoldChoice>,
}

impl CvResult {
    /// Per-metric fold values: nll, crps, check, interval, rmse, mace,
    /// sharpness. Folds without a MACE value are left out of that metric.
    pub fn fold_summaries(&self) -> BTreeMap<String, ScoreSummary> {
        let mut per: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for f in &self.folds {
            per.entry("nll").or_default().push(mean(&f.nll));
            per.entry("crps").or_default().push(mean(&f.crps));
            per.entry("check").or_default().push(mean(&f.check));
            per.entry("interval").or_default().push(mean(&f.interval));
            per.entry("rmse").or_default().push(f.rmse);
            per.entry("sharpness").or_default().push(f.sharpness);
            let mace = per.entry("mace").or_default();
            if let Some(m) = f.mace {
                mace.push(m);
            }
        }
        per.into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.to_string(), ScoreSummary::new(k, v)))
            .collect()
    }

    pub fn summary(&self) -> CvSummary {
        CvSummary {
            version: SUMMARY_VERSION,
            method: self.method,
            n_rows: self.n_rows,
            protocol: self.protocol,
            metrics: self
                .fold_summaries()
                .into_iter()
                .map(|(k, s)| {
                    (
                        k,
                        MetricSummary {
                            mean: s.mean,
                            stderr: s.stderr,
                            folds: s.scores,
                        },
                    )
                })
                .collect(),
            folds: self
                .folds
                .iter()
                .map(|f| FoldChoice {
                    fold: f.fold,
                    val_nll: f.val_nll,
                    fallbacks: f.fallbacks,
                    ibug: f.ibug,
                    knn: f.knn,
                })
                .collect(),
        }
    }

    /// One row per test instance per metric: `fold,row,metric,score`.
    pub fn write_scores_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| IbugError::Io(std::io::Error::other(e));
        w.write_record(["fold", "row", "metric", "score"]).map_err(csv_err)?;
        for f in &self.folds {
            for (j, &row) in f.test_ids.iter().enumerate() {
                for (name, col) in [("nll", &f.nll), ("crps", &f.crps), ("check", &f.check), ("interval", &f.interval)] {
                    w.write_record([f.fold.to_string(), row.to_string(), name.to_string(), format!("{:?}", col[j])])
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
