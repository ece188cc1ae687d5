//! Squared-error boosting with exact greedy splits.
//!
//! Every tree is grown depth-first. Each node keeps, per feature, its
//! non-missing members in ascending value order; children inherit those lists
//! by stable partition, so no node ever re-sorts.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Ensemble, Node, Tree};
use crate::dataset::Dataset;
use crate::error::{IbugError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    /// `None` grows until `min_leaf_size` or zero gain stops it.
    pub max_depth: Option<usize>,
    pub min_leaf_size: usize,
    pub lambda: f64,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: Some(3),
            min_leaf_size: 1,
            lambda: 0.0,
            subsample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(IbugError::invalid("learning_rate must be positive"));
        }
        if self.max_depth == Some(0) {
            return Err(IbugError::invalid("max_depth must be positive"));
        }
        if self.min_leaf_size == 0 {
            return Err(IbugError::invalid("min_leaf_size must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(IbugError::invalid("lambda must be non-negative"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(IbugError::invalid("subsample_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Fits an ensemble to `data` under squared-error loss.
///
/// With `g_i = ŷ_i − y_i` and `h_i = 1`, each leaf gets the one-step Newton
/// value `Σ(y_i − ŷ_i) / (|I| + λ)`.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<Ensemble> {
    config.validate()?;
    let n = data.n_rows();
    if n < config.min_leaf_size {
        return Err(IbugError::invalid(format!(
            "{n} rows cannot satisfy min_leaf_size {}",
            config.min_leaf_size
        )));
    }
    let p = data.n_features();
    let y = data.targets();
    let base_score = y.iter().sum::<f64>() / n as f64;

    let presorted: Vec<Vec<u32>> = (0..p)
        .map(|f| {
            let mut ids: Vec<u32> = (0..n as u32)
                .filter(|&i| !data.value(i as usize, f).is_nan())
                .collect();
            ids.sort_by(|&a, &b| {
                data.value(a as usize, f)
                    .total_cmp(&data.value(b as usize, f))
                    .then(a.cmp(&b))
            });
            ids
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_sample = ((config.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let mut preds = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut in_sample = vec![true; n];

    for _ in 0..config.n_trees {
        for i in 0..n {
            grad[i] = preds[i] - y[i];
        }
        if n_sample < n {
            in_sample.iter_mut().for_each(|s| *s = false);
            for i in sample(&mut rng, n, n_sample) {
                in_sample[i] = true;
            }
        }
        let sorted: Vec<Vec<u32>> = presorted
            .iter()
            .map(|ids| ids.iter().copied().filter(|&i| in_sample[i as usize]).collect())
            .collect();
        let members: Vec<u32> = (0..n as u32).filter(|&i| in_sample[i as usize]).collect();

        let mut builder = TreeBuilder {
            data,
            grad: &grad,
            config,
            nodes: Vec::new(),
            n_leaves: 0,
            side: vec![false; n],
        };
        builder.grow(members, sorted, 0);
        let tree = Tree::new(builder.nodes)?;

        for (i, pred) in preds.iter_mut().enumerate() {
            *pred += config.learning_rate * tree.leaf_value(data.row(i));
        }
        trees.push(tree);
    }

    Ensemble::new(base_score, config.learning_rate, config.lambda, p, trees)
}

struct TreeBuilder<'a> {
    data: &'a Dataset,
    grad: &'a [f64],
    config: &'a TrainConfig,
    nodes: Vec<Node>,
    n_leaves: usize,
    /// Scratch: `true` when a row goes to the left child of the current split.
    side: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    missing_goes_left: bool,
    gain: f64,
}

impl TreeBuilder<'_> {
    /// Appends the subtree for `members` in pre-order and returns its root index.
    fn grow(&mut self, members: Vec<u32>, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let g_sum: f64 = members.iter().map(|&i| self.grad[i as usize]).sum();
        let h_sum = members.len() as f64;
        let depth_ok = self.config.max_depth.is_none_or(|d| depth < d);

        let split = if depth_ok && members.len() >= 2 * self.config.min_leaf_size {
            self.best_split(&members, &sorted, g_sum)
        } else {
            None
        };

        let Some(split) = split else {
            let id = self.nodes.len();
            self.nodes.push(Node::Leaf {
                leaf_id: self.n_leaves,
                value: -g_sum / (h_sum + self.config.lambda),
            });
            self.n_leaves += 1;
            return id;
        };

        for &i in &members {
            let v = self.data.value(i as usize, split.feature);
            self.side[i as usize] = if v.is_nan() {
                split.missing_goes_left
            } else {
                v <= split.threshold
            };
        }
        let (left_members, right_members): (Vec<u32>, Vec<u32>) =
            members.iter().partition(|&&i| self.side[i as usize]);
        let mut left_sorted = Vec::with_capacity(sorted.len());
        let mut right_sorted = Vec::with_capacity(sorted.len());
        for ids in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = ids.into_iter().partition(|&i| self.side[i as usize]);
            left_sorted.push(l);
            right_sorted.push(r);
        }

        let id = self.nodes.len();
        // children are patched in once their positions are known
        self.nodes.push(Node::Leaf {
            leaf_id: usize::MAX,
            value: 0.0,
        });
        let left = self.grow(left_members, left_sorted, depth + 1);
        let right = self.grow(right_members, right_sorted, depth + 1);
        self.nodes[id] = Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            missing_goes_left: split.missing_goes_left,
            left,
            right,
            gain: split.gain,
        };
        id
    }

    fn best_split(&self, members: &[u32], sorted: &[Vec<u32>], g_sum: f64) -> Option<Split> {
        let lambda = self.config.lambda;
        let min_leaf = self.config.min_leaf_size as f64;
        let n_node = members.len() as f64;
        let parent_score = g_sum * g_sum / (n_node + lambda);
        let g2_sum: f64 = members.iter().map(|&i| self.grad[i as usize].powi(2)).sum();
        // gains below this are rounding noise (e.g. identical residuals)
        let min_gain = 1e-10 * g2_sum;

        let score = |gl: f64, nl: f64, gr: f64, nr: f64| {
            gl * gl / (nl + lambda) + gr * gr / (nr + lambda) - parent_score
        };

        let mut best: Option<Split> = None;
        let consider = |cand: Split, best: &mut Option<Split>| {
            if cand.gain > min_gain && cand.gain > 0.0 && best.is_none_or(|b| cand.gain > b.gain) {
                *best = Some(cand);
            }
        };

        for (feature, ids) in sorted.iter().enumerate() {
            let g_present: f64 = ids.iter().map(|&i| self.grad[i as usize]).sum();
            let n_present = ids.len() as f64;
            let g_missing = g_sum - g_present;
            let n_missing = n_node - n_present;

            let mut gl = 0.0;
            for (pos, &i) in ids.iter().enumerate() {
                gl += self.grad[i as usize];
                let nl = (pos + 1) as f64;
                let v = self.data.value(i as usize, feature);
                let next = ids.get(pos + 1).map(|&j| self.data.value(j as usize, feature));
                let threshold = match next {
                    Some(w) if w > v => midpoint(v, w),
                    Some(_) => continue,
                    // all present values left, missing right
                    None if n_missing > 0.0 => v,
                    None => continue,
                };

                // missing left
                if next.is_some() {
                    let (l_g, l_n) = (gl + g_missing, nl + n_missing);
                    let (r_g, r_n) = (g_sum - l_g, n_node - l_n);
                    if l_n >= min_leaf && r_n >= min_leaf {
                        consider(
                            Split {
                                feature,
                                threshold,
                                missing_goes_left: true,
                                gain: score(l_g, l_n, r_g, r_n),
                            },
                            &mut best,
                        );
                    }
                }
                // missing right
                if n_missing > 0.0 {
                    let (l_g, l_n) = (gl, nl);
                    let (r_g, r_n) = (g_sum - gl, n_node - nl);
                    if l_n >= min_leaf && r_n >= min_leaf {
                        consider(
                            Split {
                                feature,
                                threshold,
                                missing_goes_left: false,
                                gain: score(l_g, l_n, r_g, r_n),
                            },
                            &mut best,
                        );
                    }
                }
            }
        }
        best
    }
}

/// A threshold `t` with `a <= t < b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = 0.5 * a + 0.5 * b;
    if m >= a && m < b {
        m
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> Dataset {
        let xs: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        Dataset::from_rows(xs.iter().map(|&x| vec![x]).collect(), ys).unwrap()
    }

    #[test]
    fn zero_trees_predict_mean() {
        let data = line_data();
        let cfg = TrainConfig {
            n_trees: 0,
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        let mean = data.targets().iter().sum::<f64>() / 11.0;
        for row in data.rows() {
            assert_eq!(m.predict(row).unwrap(), mean);
        }
    }

    #[test]
    fn single_instance_fixed_point() {
        let data = Dataset::from_rows(vec![vec![0.7, -1.0]], vec![3.25]).unwrap();
        let cfg = TrainConfig {
            n_trees: 5,
            lambda: 0.0,
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        assert_eq!(m.predict(&[0.7, -1.0]).unwrap(), 3.25);
    }

    #[test]
    fn midpoint_stays_in_interval() {
        assert_eq!(midpoint(0.0, 1.0), 0.5);
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        assert_eq!(midpoint(a, b), a);
        assert!(midpoint(-f64::MAX, f64::MAX).is_finite());
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                max_depth: Some(0),
                ..Default::default()
            },
            TrainConfig {
                min_leaf_size: 0,
                ..Default::default()
            },
            TrainConfig {
                subsample_fraction: 1.5,
                ..Default::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn min_leaf_larger_than_data_rejected() {
        let data = line_data();
        let cfg = TrainConfig {
            min_leaf_size: 20,
            ..Default::default()
        };
        assert!(train(&data, &cfg).is_err());
    }

    #[test]
    fn missing_values_get_a_side() {
        // the missing rows carry a distinct target; the split should isolate them
        let rows = vec![vec![0.0], vec![1.0], vec![f64::NAN], vec![f64::NAN]];
        let data = Dataset::from_rows(rows, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        let cfg = TrainConfig {
            n_trees: 1,
            learning_rate: 1.0,
            max_depth: Some(1),
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        assert_eq!(m.predict(&[f64::NAN]).unwrap(), 10.0);
        assert_eq!(m.predict(&[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn respects_min_leaf_size() {
        let data = line_data();
        let cfg = TrainConfig {
            n_trees: 3,
            max_depth: None,
            min_leaf_size: 4,
            ..Default::default()
        };
        let m = train(&data, &cfg).unwrap();
        for tree in m.trees() {
            let mut counts = vec![0; tree.n_leaves()];
            for row in data.rows() {
                counts[tree.leaf_id(row)] += 1;
            }
            assert!(counts.iter().all(|&c| c >= 4), "{counts:?}");
        }
    }
}
