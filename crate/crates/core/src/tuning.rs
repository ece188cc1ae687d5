//! Validation-set tuning of `k`, the variance floor, the calibration pair
//! `(γ, δ)` and the output family.
//!
//! Tuning never sees test data: every operation takes the validation split
//! only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{argsort_desc, compute_affinities, top_k, NeighborSet};
use crate::dataset::Dataset;
use crate::error::{IbugError, Result};
use crate::gbrt::Ensemble;
use crate::leaf_index::LeafIndex;
use crate::metrics::{nll, ScoreSummary, ScoringRule};
use crate::posterior::{posterior_from_neighbors, DistributionFamily, PosteriorConfig, DEFAULT_RHO};

pub const DEFAULT_K_GRID: [usize; 17] = [3, 5, 7, 9, 11, 15, 31, 61, 91, 121, 151, 201, 301, 401, 501, 601, 701];

const SCALE_VALUES: [f64; 13] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 0.0, 1e0, 1e1, 1e2, 1e3];
const SCALE_MULTIPLIERS: [f64; 3] = [1.0, 2.5, 5.0];

/// Fraction of failed fits above which a family is disqualified.
pub const MAX_FIT_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGrids {
    pub k_grid: Vec<usize>,
    pub gamma_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub family_grid: Vec<DistributionFamily>,
    pub metric: ScoringRule,
}

fn scale_grid(keep_zero: bool) -> Vec<f64> {
    let mut out: Vec<f64> = SCALE_VALUES
        .iter()
        .flat_map(|&v| SCALE_MULTIPLIERS.iter().map(move |&m| v * m))
        .filter(|&v| keep_zero || v > 0.0)
        .collect();
    out.dedup();
    out
}

impl CandidateGrids {
    /// Default grids with `k` clipped to the training-set size.
    pub fn standard(n_train: usize) -> Self {
        let mut k_grid: Vec<usize> = DEFAULT_K_GRID.iter().copied().filter(|&k| k <= n_train).collect();
        if k_grid.is_empty() && n_train >= 2 {
            k_grid.push(n_train);
        }
        CandidateGrids {
            k_grid,
            gamma_grid: scale_grid(false),
            delta_grid: scale_grid(true),
            family_grid: DistributionFamily::ALL.to_vec(),
            metric: ScoringRule::Nll,
        }
    }

    pub fn with_metric(mut self, metric: ScoringRule) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.k_grid.is_empty() {
            return Err(IbugError::invalid("k grid is empty"));
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IbugError::invalid("k grid must be strictly ascending"));
        }
        if self.k_grid[0] < 2 || *self.k_grid.last().unwrap() > n_train {
            return Err(IbugError::invalid(format!("k grid must lie in [2, {n_train}]")));
        }
        if self.gamma_grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(IbugError::invalid("gamma grid values must be positive"));
        }
        if self.delta_grid.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return Err(IbugError::invalid("delta grid values must be non-negative"));
        }
        if self.family_grid.is_empty() {
            return Err(IbugError::invalid("family grid is empty"));
        }
        Ok(())
    }
}

/// Outcome of the `k` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct KTuning {
    pub k: usize,
    pub rho: f64,
    pub k_grid: Vec<usize>,
    /// `scores[j][c]`: validation instance `j` scored at `k_grid[c]`.
    pub scores: Vec<Vec<f64>>,
}

impl KTuning {
    pub fn mean_scores(&self) -> Vec<f64> {
        column_means(&self.scores, self.k_grid.len())
    }
}

fn column_means(table: &[Vec<f64>], n_cols: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n_cols];
    for row in table {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums.iter().map(|s| s / table.len() as f64).collect()
}

fn column(table: &[Vec<f64>], c: usize) -> Vec<f64> {
    table.iter().map(|row| row[c]).collect()
}

/// Index of the smallest value; the first one wins ties.
fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

fn check_val(val: &Dataset) -> Result<()> {
    if val.n_rows() == 0 {
        return Err(IbugError::invalid("validation set is empty"));
    }
    Ok(())
}

/// Sweeps the `k` grid with one affinity computation and one argsort per
/// validation instance. Scoring uses the normal family, no calibration and
/// the default floor.
pub fn fast_tune_k(
    val: &Dataset,
    model: &Ensemble,
    index: &LeafIndex,
    grids: &CandidateGrids,
    trees: &[usize],
) -> Result<KTuning> {
    check_val(val)?;
    grids.validate(index.n_train())?;
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..val.n_rows())
        .into_par_iter()
        .map(|j| {
            let x = val.row(j);
            let y = val.targets()[j];
            let mu = model.predict(x)?;
            let order = argsort_desc(&compute_affinities(x, model, index, trees)?);
            let mut scores = Vec::with_capacity(grids.k_grid.len());
            let mut raw = Vec::with_capacity(grids.k_grid.len());
            for &k in &grids.k_grid {
                let neighbors = NeighborSet::from_ids(&order[..k], index.targets());
                let cfg = PosteriorConfig::new(k);
                let pred = posterior_from_neighbors(mu, &neighbors, &cfg)?;
                scores.push(grids.metric.score(&pred.dist, y)?);
                raw.push(crate::posterior::sample_variance(&neighbors.targets));
            }
            Ok((scores, raw))
        })
        .collect();
    let mut scores = Vec::with_capacity(rows.len());
    let mut raws = Vec::with_capacity(rows.len());
    for r in rows {
        let (s, v) = r?;
        scores.push(s);
        raws.push(v);
    }
    let best = argmin_first(&column_means(&scores, grids.k_grid.len()));
    let rho = min_nonzero(raws.iter().map(|v| v[best]));
    Ok(KTuning {
        k: grids.k_grid[best],
        rho,
        k_grid: grids.k_grid.clone(),
        scores,
    })
}

fn min_nonzero(values: impl Iterator<Item = f64>) -> f64 {
    values
        .filter(|&v| v > 0.0)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
        .unwrap_or(DEFAULT_RHO)
}

/// Per validation instance: point prediction and the `k` neighborhood.
struct Neighborhoods {
    mu: Vec<f64>,
    neighbors: Vec<NeighborSet>,
}

fn neighborhoods(val: &Dataset, model: &Ensemble, index: &LeafIndex, trees: &[usize], k: usize) -> Result<Neighborhoods> {
    let per: Vec<Result<(f64, NeighborSet)>> = (0..val.n_rows())
        .into_par_iter()
        .map(|j| {
            let x = val.row(j);
            let mu = model.predict(x)?;
            let aff = compute_affinities(x, model, index, trees)?;
            Ok((mu, top_k(&aff, k, index.targets())?))
        })
        .collect();
    let mut out = Neighborhoods {
        mu: Vec::with_capacity(per.len()),
        neighbors: Vec::with_capacity(per.len()),
    };
    for p in per {
        let (mu, n) = p?;
        out.mu.push(mu);
        out.neighbors.push(n);
    }
    Ok(out)
}

fn score_config(val: &Dataset, hood: &Neighborhoods, cfg: &PosteriorConfig, metric: ScoringRule) -> Result<Vec<f64>> {
    (0..val.n_rows())
        .into_par_iter()
        .map(|j| {
            let pred = posterior_from_neighbors(hood.mu[j], &hood.neighbors[j], cfg)?;
            metric.score(&pred.dist, val.targets()[j])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCandidate {
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTuning {
    pub gamma: f64,
    pub delta: f64,
    /// Candidates in evaluation order; the identity comes first.
    pub candidates: Vec<CalibrationCandidate>,
    pub summaries: Vec<ScoreSummary>,
}

/// Searches `{(γ, 0)} ∪ {(1, δ)}` with `k`, `ρ` and family taken from `base`.
/// The identity is scored first so it wins ties.
pub fn tune_calibration(
    val: &Dataset,
    model: &Ensemble,
    index: &LeafIndex,
    trees: &[usize],
    base: &PosteriorConfig,
    grids: &CandidateGrids,
) -> Result<CalibrationTuning> {
    check_val(val)?;
    base.validate()?;
    let hood = neighborhoods(val, model, index, trees, base.k)?;
    let mut candidates = vec![CalibrationCandidate { gamma: 1.0, delta: 0.0 }];
    candidates.extend(grids.gamma_grid.iter().map(|&gamma| CalibrationCandidate { gamma, delta: 0.0 }));
    candidates.extend(grids.delta_grid.iter().map(|&delta| CalibrationCandidate { gamma: 1.0, delta }));
    let mut summaries = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let cfg = PosteriorConfig {
            gamma: c.gamma,
            delta: c.delta,
            ..*base
        };
        summaries.push(ScoreSummary::new(grids.metric.to_string(), score_config(val, &hood, &cfg, grids.metric)?));
    }
    let means: Vec<f64> = summaries.iter().map(|s| s.mean).collect();
    let best = candidates[argmin_first(&means)];
    Ok(CalibrationTuning {
        gamma: best.gamma,
        delta: best.delta,
        candidates,
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyScore {
    pub family: DistributionFamily,
    pub mean: f64,
    pub stderr: f64,
    pub failures: usize,
    pub disqualified: bool,
}

/// Scores every family by mean validation NLL over the instances where its
/// fit succeeded. More than 1% failed fits disqualifies a family; ties go to
/// the earlier family in `families`.
pub fn select_family(
    val: &Dataset,
    model: &Ensemble,
    index: &LeafIndex,
    trees: &[usize],
    cfg: &PosteriorConfig,
    families: &[DistributionFamily],
) -> Result<(DistributionFamily, Vec<FamilyScore>)> {
    check_val(val)?;
    cfg.validate()?;
    if families.is_empty() {
        return Err(IbugError::invalid("family list is empty"));
    }
    let hood = neighborhoods(val, model, index, trees, cfg.k)?;
    let n = val.n_rows();
    let mut table = Vec::with_capacity(families.len());
    for &family in families {
        let fcfg = PosteriorConfig { family, ..*cfg };
        let per: Vec<Option<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                posterior_from_neighbors(hood.mu[j], &hood.neighbors[j], &fcfg)
                    .ok()
                    .map(|p| nll(&p.dist, val.targets()[j]))
            })
            .collect();
        let ok: Vec<f64> = per.iter().flatten().copied().collect();
        let failures = n - ok.len();
        let disqualified = ok.is_empty() || failures as f64 > MAX_FIT_FAILURE_RATE * n as f64;
        let (mean, stderr) = if ok.is_empty() {
            (f64::INFINITY, 0.0)
        } else {
            let s = ScoreSummary::new("nll", ok);
            (s.mean, s.stderr)
        };
        table.push(FamilyScore {
            family,
            mean,
            stderr,
            failures,
            disqualified,
        });
    }
    let mut best: Option<&FamilyScore> = None;
    for s in table.iter().filter(|s| !s.disqualified) {
        if best.is_none_or(|b| s.mean < b.mean) {
            best = Some(s);
        }
    }
    match best {
        Some(b) => Ok((b.family, table)),
        None => Err(IbugError::fit("every candidate family failed on the validation set")),
    }
}

/// Everything chosen on the validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub config: PosteriorConfig,
    pub k_tuning: KTuning,
    pub calibration: CalibrationTuning,
    pub families: Vec<FamilyScore>,
}

/// `k` and `ρ`, then `(γ, δ)` under the normal family, then the family.
pub fn tune(
    val: &Dataset,
    model: &Ensemble,
    index: &LeafIndex,
    trees: &[usize],
    grids: &CandidateGrids,
) -> Result<TuneResult> {
    let k_tuning = fast_tune_k(val, model, index, grids, trees)?;
    let base = PosteriorConfig {
        rho: k_tuning.rho,
        ..PosteriorConfig::new(k_tuning.k)
    };
    let calibration = tune_calibration(val, model, index, trees, &base, grids)?;
    let calibrated = PosteriorConfig {
        gamma: calibration.gamma,
        delta: calibration.delta,
        ..base
    };
    let (family, families) = select_family(val, model, index, trees, &calibrated, &grids.family_grid)?;
    Ok(TuneResult {
        config: PosteriorConfig { family, ..calibrated },
        k_tuning,
        calibration,
        families,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore<T> {
    pub candidate: T,
    pub mean: f64,
    pub stderr: f64,
}

/// Serializable summary of a tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub version: u32,
    pub metric: ScoringRule,
    pub grids: CandidateGrids,
    pub k_scores: Vec<CandidateScore<usize>>,
    pub calibration_scores: Vec<CandidateScore<CalibrationCandidate>>,
    pub family_scores: Vec<FamilyScore>,
    pub chosen: PosteriorConfig,
}

pub const TUNE_REPORT_VERSION: u32 = 1;

impl TuneReport {
    pub fn new(result: &TuneResult, grids: &CandidateGrids) -> Self {
        let k_scores = result
            .k_tuning
            .k_grid
            .iter()
            .enumerate()
            .map(|(c, &k)| {
                let s = ScoreSummary::new(grids.metric.to_string(), column(&result.k_tuning.scores, c));
                CandidateScore {
                    candidate: k,
                    mean: s.mean,
                    stderr: s.stderr,
                }
            })
            .collect();
        let calibration_scores = result
            .calibration
            .candidates
            .iter()
            .zip(&result.calibration.summaries)
            .map(|(&c, s)| CandidateScore {
                candidate: c,
                mean: s.mean,
                stderr: s.stderr,
            })
            .collect();
        TuneReport {
            version: TUNE_REPORT_VERSION,
            metric: grids.metric,
            grids: grids.clone(),
            k_scores,
            calibration_scores,
            family_scores: result.families.clone(),
            chosen: result.config,
        }
    }
}
