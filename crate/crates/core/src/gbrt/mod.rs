//! Gradient-boosted regression tree ensembles.
//!
//! An [`Ensemble`] is an additive model `base_score + η · Σ_t m_t(x)` where
//! every `m_t` is a binary regression tree whose leaves carry dense ids
//! `0..M_t`. Trees come either from the native trainer in [`train`] or from an
//! external dump parsed by [`crate::model_io`].

mod train;

pub use train::{train, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::error::{IbugError, Result};

/// One node of a regression tree, stored in a pre-order arena.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Internal {
        feature: usize,
        #[serde(with = "extended_f64")]
        threshold: f64,
        missing_goes_left: bool,
        left: usize,
        right: usize,
        #[serde(default, with = "extended_f64")]
        gain: f64,
    },
    Leaf {
        leaf_id: usize,
        #[serde(with = "extended_f64")]
        value: f64,
    },
}

/// JSON has no infinities, so non-finite values travel as the strings
/// `"inf"`, `"-inf"` and `"nan"`. LightGBM, for one, writes `inf` thresholds.
mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid number '{other}'"))),
            },
        }
    }
}

/// A binary regression tree. `x[feature] <= threshold` routes left, a missing
/// value follows `missing_goes_left`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    n_leaves: usize,
    /// External leaf numbering, indexed by dense leaf id. Only set for parsed models.
    original_leaf_ids: Option<Vec<i64>>,
}

impl Tree {
    /// Validates the arena and counts leaves. Node 0 is the root.
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(IbugError::invalid("tree has no nodes"));
        }
        let mut seen_leaf = Vec::new();
        let mut reached = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if reached[i] {
                return Err(IbugError::invalid(format!("node {i} reached twice")));
            }
            reached[i] = true;
            match &nodes[i] {
                Node::Internal {
                    left,
                    right,
                    threshold,
                    ..
                } => {
                    if *left >= nodes.len() || *right >= nodes.len() {
                        return Err(IbugError::invalid(format!("node {i} has an out-of-range child")));
                    }
                    if threshold.is_nan() {
                        return Err(IbugError::invalid(format!("node {i} has a NaN threshold")));
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
                Node::Leaf { leaf_id, .. } => seen_leaf.push(*leaf_id),
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(IbugError::invalid("tree contains unreachable nodes"));
        }
        let n_leaves = seen_leaf.len();
        seen_leaf.sort_unstable();
        if seen_leaf.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(IbugError::invalid("leaf ids are not dense 0..M"));
        }
        Ok(Tree {
            nodes,
            n_leaves,
            original_leaf_ids: None,
        })
    }

    pub fn single_leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { leaf_id: 0, value }],
            n_leaves: 1,
            original_leaf_ids: None,
        }
    }

    pub(crate) fn with_original_leaf_ids(mut self, ids: Vec<i64>) -> Self {
        debug_assert_eq!(ids.len(), self.n_leaves);
        self.original_leaf_ids = Some(ids);
        self
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn original_leaf_ids(&self) -> Option<&[i64]> {
        self.original_leaf_ids.as_deref()
    }

    #[inline]
    fn leaf_node(&self, x: &[f64]) -> (usize, f64) {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Internal {
                    feature,
                    threshold,
                    missing_goes_left,
                    left,
                    right,
                    ..
                } => {
                    let v = x[*feature];
                    let go_left = if v.is_nan() {
                        *missing_goes_left
                    } else {
                        v <= *threshold
                    };
                    i = if go_left { *left } else { *right };
                }
                Node::Leaf { leaf_id, value } => return (*leaf_id, *value),
            }
        }
    }

    /// Dense id of the leaf `x` is routed to.
    #[inline]
    pub fn leaf_id(&self, x: &[f64]) -> usize {
        self.leaf_node(x).0
    }

    #[inline]
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        self.leaf_node(x).1
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

/// Arithmetic used to accumulate per-tree outputs into a raw score.
///
/// Native models sum in `f64`. XGBoost accumulates in `f32` starting from the
/// base score, so parsed XGBoost models replay that to reproduce its outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accumulation {
    #[default]
    F64,
    F32,
}

/// A trained additive tree model.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub(crate) base_score: f64,
    pub(crate) learning_rate: f64,
    pub(crate) lambda: f64,
    pub(crate) n_features: usize,
    pub(crate) trees: Vec<Tree>,
    pub(crate) accumulation: Accumulation,
}

impl Ensemble {
    pub fn new(
        base_score: f64,
        learning_rate: f64,
        lambda: f64,
        n_features: usize,
        trees: Vec<Tree>,
    ) -> Result<Self> {
        if !base_score.is_finite() {
            return Err(IbugError::invalid("base score must be finite"));
        }
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(IbugError::invalid("learning rate must be positive"));
        }
        if !(lambda >= 0.0) {
            return Err(IbugError::invalid("lambda must be non-negative"));
        }
        if n_features == 0 {
            return Err(IbugError::invalid("model needs at least one feature"));
        }
        if let Some(f) = trees.iter().filter_map(Tree::max_feature).max() {
            if f >= n_features {
                return Err(IbugError::invalid(format!(
                    "split on feature {f} but model has {n_features} features"
                )));
            }
        }
        Ok(Ensemble {
            base_score,
            learning_rate,
            lambda,
            n_features,
            trees,
            accumulation: Accumulation::F64,
        })
    }

    pub fn with_accumulation(mut self, accumulation: Accumulation) -> Self {
        self.accumulation = accumulation;
        self
    }

    pub fn base_score(&self) -> f64 {
        self.base_score
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn accumulation(&self) -> Accumulation {
        self.accumulation
    }

    pub(crate) fn check_row(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(IbugError::invalid(format!(
                "row has {} features, model expects {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Point prediction `base_score + η · Σ_t m_t(x)`.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_row(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match self.accumulation {
            Accumulation::F64 => {
                let sum: f64 = self.trees.iter().map(|t| t.leaf_value(x)).sum();
                self.base_score + self.learning_rate * sum
            }
            Accumulation::F32 => {
                let mut acc = self.base_score as f32;
                for t in &self.trees {
                    acc += (self.learning_rate * t.leaf_value(x)) as f32;
                }
                acc as f64
            }
        }
    }

    /// Leaf ids of `x` in each of the listed trees, in list order.
    pub fn leaf_path(&self, x: &[f64], subset: &[usize]) -> Result<Vec<usize>> {
        self.check_row(x)?;
        subset
            .iter()
            .map(|&t| {
                self.trees
                    .get(t)
                    .map(|tree| tree.leaf_id(x))
                    .ok_or_else(|| IbugError::invalid(format!("tree index {t} out of range")))
            })
            .collect()
    }

    /// Total split gain per feature. Unused features get zero.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut gains = vec![0.0; self.n_features];
        for tree in &self.trees {
            for node in tree.nodes() {
                if let Node::Internal { feature, gain, .. } = node {
                    gains[*feature] += gain.max(0.0);
                }
            }
        }
        gains
    }
}
