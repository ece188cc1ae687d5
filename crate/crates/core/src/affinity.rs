//! Tree-kernel affinities and high-affinity neighbor selection.
//!
//! The affinity of training instance `i` to a target `x` is the number of
//! selected trees in which both land in the same leaf. Neighbors are ranked by
//! the total order (affinity descending, instance id ascending).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IbugError, Result};
use crate::gbrt::Ensemble;
use crate::leaf_index::LeafIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TreeSampling {
    #[default]
    All,
    UniformRandom,
    FirstToLast,
    LastToFirst,
}

impl FromStr for TreeSampling {
    type Err = IbugError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TreeSampling::All),
            "random" | "uniform-random" => Ok(TreeSampling::UniformRandom),
            "first" | "first-to-last" => Ok(TreeSampling::FirstToLast),
            "last" | "last-to-first" => Ok(TreeSampling::LastToFirst),
            other => Err(IbugError::invalid(format!("unknown tree sampling '{other}'"))),
        }
    }
}

impl fmt::Display for TreeSampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeSampling::All => "all",
            TreeSampling::UniformRandom => "uniform-random",
            TreeSampling::FirstToLast => "first-to-last",
            TreeSampling::LastToFirst => "last-to-first",
        })
    }
}

/// Which trees contribute to affinities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSubset {
    pub strategy: TreeSampling,
    pub tau: usize,
    /// Only used by [`TreeSampling::UniformRandom`].
    pub seed: u64,
}

impl TreeSubset {
    pub fn all(n_trees: usize) -> Self {
        TreeSubset {
            strategy: TreeSampling::All,
            tau: n_trees,
            seed: 0,
        }
    }
}

/// Sorted, distinct tree indices in `0..n_trees` chosen by `subset`.
pub fn select_trees(n_trees: usize, subset: &TreeSubset) -> Result<Vec<usize>> {
    if subset.strategy == TreeSampling::All {
        return Ok((0..n_trees).collect());
    }
    let tau = subset.tau;
    if tau == 0 || tau > n_trees {
        return Err(IbugError::invalid(format!(
            "tau = {tau} must lie in [1, {n_trees}]"
        )));
    }
    Ok(match subset.strategy {
        TreeSampling::All => unreachable!(),
        TreeSampling::FirstToLast => (0..tau).collect(),
        TreeSampling::LastToFirst => (n_trees - tau..n_trees).collect(),
        TreeSampling::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(subset.seed);
            let mut picked = sample(&mut rng, n_trees, tau).into_vec();
            picked.sort_unstable();
            picked
        }
    })
}

/// Per-training-instance co-occurrence counts for one target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityVector {
    pub counts: Vec<u32>,
    pub n_trees_used: usize,
}

/// Counts, for every training instance, the listed trees in which it shares
/// a leaf with `x`.
pub fn compute_affinities(
    x: &[f64],
    model: &Ensemble,
    index: &LeafIndex,
    trees: &[usize],
) -> Result<AffinityVector> {
    model.check_row(x)?;
    index.check_model(model)?;
    let mut counts = vec![0u32; index.n_train()];
    for &t in trees {
        let tree = model
            .trees()
            .get(t)
            .ok_or_else(|| IbugError::invalid(format!("tree index {t} out of range")))?;
        for &i in index.lookup(t, tree.leaf_id(x)) {
            counts[i as usize] += 1;
        }
    }
    Ok(AffinityVector {
        counts,
        n_trees_used: trees.len(),
    })
}

/// The `k` highest-affinity training instances with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub ids: Vec<u32>,
    pub targets: Vec<f64>,
}

impl NeighborSet {
    pub fn k(&self) -> usize {
        self.ids.len()
    }

    pub(crate) fn from_ids(ids: &[u32], targets: &[f64]) -> Self {
        NeighborSet {
            ids: ids.to_vec(),
            targets: ids.iter().map(|&i| targets[i as usize]).collect(),
        }
    }
}

#[inline]
fn rank(counts: &[u32]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b))
}

/// Partial selection of the top `k` instances, returned in rank order.
pub fn top_k(aff: &AffinityVector, k: usize, targets: &[f64]) -> Result<NeighborSet> {
    let n = aff.counts.len();
    if k == 0 || k > n {
        return Err(IbugError::invalid(format!("k = {k} must lie in [1, {n}]")));
    }
    if targets.len() != n {
        return Err(IbugError::invalid("targets length does not match affinities"));
    }
    let cmp = rank(&aff.counts);
    let mut ids: Vec<u32> = (0..n as u32).collect();
    if k < n {
        ids.select_nth_unstable_by(k - 1, &cmp);
        ids.truncate(k);
    }
    ids.sort_unstable_by(&cmp);
    Ok(NeighborSet::from_ids(&ids, targets))
}

/// Every instance id in rank order; the first `k` entries equal `top_k(.., k)`.
pub fn argsort_desc(aff: &AffinityVector) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..aff.counts.len() as u32).collect();
    ids.sort_unstable_by(rank(&aff.counts));
    ids
}
