//! Prediction cost versus the number of trees used for affinities.
//!
//! Runs on the calling thread only, so timings are not affected by the
//! parallel pool.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affinity::{compute_affinities, select_trees, top_k, TreeSampling, TreeSubset};
use crate::dataset::Dataset;
use crate::error::{IbugError, Result};
use crate::gbrt::Ensemble;
use crate::leaf_index::LeafIndex;
use crate::metrics::nll;
use crate::posterior::{posterior_from_neighbors, PosteriorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub tau: usize,
    /// Mean seconds per probe spent computing affinities.
    pub affinity_seconds: f64,
    /// Mean seconds per probe for the whole probabilistic prediction.
    pub predict_seconds: f64,
    pub mean_nll: f64,
}

pub fn benchmark_timing(
    model: &Ensemble,
    index: &LeafIndex,
    probes: &Dataset,
    tau_grid: &[usize],
    strategy: TreeSampling,
    seed: u64,
    cfg: &PosteriorConfig,
) -> Result<Vec<TimingRow>> {
    cfg.validate()?;
    let n_trees = model.n_trees();
    if let Some(&tau) = tau_grid.iter().find(|&&t| t == 0 || t > n_trees) {
        return Err(IbugError::invalid(format!("tau = {tau} must lie in [1, {n_trees}]")));
    }
    let m = probes.n_rows() as f64;
    let mut rows = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let trees = select_trees(n_trees, &TreeSubset { strategy, tau, seed })?;
        let (mut aff_secs, mut total_secs, mut nll_sum) = (0.0, 0.0, 0.0);
        for (x, &y) in probes.rows().zip(probes.targets()) {
            let start = Instant::now();
            let mu = model.predict(x)?;
            let a0 = Instant::now();
            let aff = compute_affinities(x, model, index, &trees)?;
            let a1 = Instant::now();
            let neighbors = top_k(&aff, cfg.k, index.targets())?;
            let pred = posterior_from_neighbors(mu, &neighbors, cfg)?;
            total_secs += start.elapsed().as_secs_f64();
            aff_secs += (a1 - a0).as_secs_f64();
            nll_sum += nll(&pred.dist, y);
        }
        rows.push(TimingRow {
            tau,
            affinity_seconds: aff_secs / m,
            predict_seconds: total_secs / m,
            mean_nll: nll_sum / m,
        });
    }
    Ok(rows)
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], mut out: W) -> Result<()> {
    writeln!(out, "tau,affinity_seconds,predict_seconds,mean_nll")?;
    for r in rows {
        writeln!(
            out,
            "{},{:?},{:?},{:?}",
            r.tau, r.affinity_seconds, r.predict_seconds, r.mean_nll
        )?;
    }
    Ok(())
}
