//! XGBoost `save_model` JSON documents.
//!
//! XGBoost compares features in single precision (`f32(x) < split`) and sums
//! tree outputs in single precision. Thresholds are converted to the largest
//! `f64` that still rounds below the split value, so the shared `x <= t`
//! routing reproduces its decisions for every input.

use serde_json::Value;

use super::dense_leaf_ids;
use crate::error::{IbugError, Result};
use crate::gbrt::{Accumulation, Ensemble, Node, Tree};

const IDENTITY_OBJECTIVES: &[&str] = &["reg:squarederror", "reg:absoluteerror", "reg:pseudohubererror"];

fn field<'a>(v: &'a Value, path: &str) -> Result<&'a Value> {
    let mut cur = v;
    for key in path.split('.') {
        cur = cur
            .get(key)
            .ok_or_else(|| IbugError::parse(path.to_string(), format!("missing key '{key}'")))?;
    }
    Ok(cur)
}

/// XGBoost writes most scalars as strings, sometimes wrapped in `[...]`.
fn scalar_f64(v: &Value, path: &str) -> Result<Vec<f64>> {
    let bad = || IbugError::parse(path.to_string(), "expected a number");
    match v {
        Value::Number(n) => Ok(vec![n.as_f64().ok_or_else(bad)?]),
        Value::String(s) => s
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect(),
        _ => Err(bad()),
    }
}

fn scalar_usize(v: &Value, path: &str) -> Result<usize> {
    let vals = scalar_f64(v, path)?;
    match vals.as_slice() {
        [x] if *x >= 0.0 && x.fract() == 0.0 => Ok(*x as usize),
        _ => Err(IbugError::parse(path.to_string(), "expected a non-negative integer")),
    }
}

fn array<'a>(tree: &'a Value, key: &str, id: usize) -> Result<&'a Vec<Value>> {
    tree.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| IbugError::parse(format!("trees[{id}].{key}"), "missing array"))
}

fn ints(tree: &Value, key: &str, id: usize) -> Result<Vec<i64>> {
    array(tree, key, id)?
        .iter()
        .map(|v| match v {
            Value::Bool(b) => Some(*b as i64),
            other => other.as_i64(),
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| IbugError::parse(format!("trees[{id}].{key}"), "expected integers"))
}

fn floats(tree: &Value, key: &str, id: usize) -> Result<Vec<f64>> {
    array(tree, key, id)?
        .iter()
        .map(Value::as_f64)
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| IbugError::parse(format!("trees[{id}].{key}"), "expected numbers"))
}

pub(super) fn parse(bytes: &[u8]) -> Result<Ensemble> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| {
        IbugError::parse(format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    let learner = field(&doc, "learner")?;

    let objective = field(learner, "objective.name")?.as_str().unwrap_or_default();
    if !IDENTITY_OBJECTIVES.contains(&objective) {
        return Err(IbugError::UnsupportedModel(format!(
            "objective '{objective}' is not an identity-link regression objective"
        )));
    }
    let params = field(learner, "learner_model_param")?;
    if let Some(t) = params.get("num_target") {
        let t = scalar_usize(t, "learner_model_param.num_target")?;
        if t > 1 {
            return Err(IbugError::UnsupportedModel(format!("{t} targets")));
        }
    }
    if let Some(c) = params.get("num_class") {
        let c = scalar_usize(c, "learner_model_param.num_class")?;
        if c > 1 {
            return Err(IbugError::UnsupportedModel(format!("{c} classes")));
        }
    }
    let base = scalar_f64(field(params, "base_score")?, "learner_model_param.base_score")?;
    let [base_score] = base.as_slice() else {
        return Err(IbugError::UnsupportedModel("vector-valued base_score".into()));
    };
    let n_features = scalar_usize(field(params, "num_feature")?, "learner_model_param.num_feature")?;

    let booster = field(learner, "gradient_booster")?;
    let name = booster.get("name").and_then(Value::as_str).unwrap_or_default();
    if name != "gbtree" {
        return Err(IbugError::UnsupportedModel(format!("booster '{name}'")));
    }
    let trees_json = field(booster, "model.trees")?
        .as_array()
        .ok_or_else(|| IbugError::parse("model.trees", "expected an array"))?;
    if let Some(info) = booster.get("model").and_then(|m| m.get("tree_info")).and_then(Value::as_array) {
        if info.iter().any(|g| g.as_i64() != Some(0)) {
            return Err(IbugError::UnsupportedModel("trees for more than one output group".into()));
        }
    }

    let trees = trees_json
        .iter()
        .enumerate()
        .map(|(id, t)| parse_tree(t, id))
        .collect::<Result<Vec<_>>>()?;
    let base32 = *base_score as f32;
    Ok(Ensemble::new(base32 as f64, 1.0, 0.0, n_features.max(1), trees)?
        .with_accumulation(Accumulation::F32))
}

fn parse_tree(t: &Value, id: usize) -> Result<Tree> {
    if let Some(size) = t.get("tree_param").and_then(|p| p.get("size_leaf_vector")) {
        if scalar_usize(size, "tree_param.size_leaf_vector")? > 1 {
            return Err(IbugError::UnsupportedModel(format!("trees[{id}] has vector leaves")));
        }
    }
    let left = ints(t, "left_children", id)?;
    let right = ints(t, "right_children", id)?;
    let feature = ints(t, "split_indices", id)?;
    let cond = floats(t, "split_conditions", id)?;
    let default_left = ints(t, "default_left", id)?;
    let gain = floats(t, "loss_changes", id).unwrap_or_else(|_| vec![0.0; left.len()]);
    let n = left.len();
    if [right.len(), feature.len(), cond.len(), default_left.len(), gain.len()]
        .iter()
        .any(|&l| l != n)
        || n == 0
    {
        return Err(IbugError::parse(format!("trees[{id}]"), "node arrays differ in length"));
    }
    if let Ok(kinds) = ints(t, "split_type", id) {
        if kinds.iter().any(|&k| k != 0) {
            return Err(IbugError::UnsupportedModel(format!("trees[{id}] has categorical splits")));
        }
    }

    let leaves: Vec<i64> = (0..n).filter(|&i| left[i] == -1).map(|i| i as i64).collect();
    let dense_of_leaf = dense_leaf_ids(&leaves);
    let mut dense = vec![usize::MAX; n];
    for (k, &leaf) in leaves.iter().enumerate() {
        dense[leaf as usize] = dense_of_leaf[k];
    }

    let mut nodes = Vec::with_capacity(n);
    let mut stack: Vec<(usize, Option<(usize, bool)>)> = vec![(0, None)];
    while let Some((i, parent)) = stack.pop() {
        if nodes.len() >= n {
            return Err(IbugError::parse(format!("trees[{id}]"), "tree structure contains a cycle"));
        }
        let slot = nodes.len();
        if left[i] == -1 {
            nodes.push(Node::Leaf {
                leaf_id: dense[i],
                value: cond[i] as f32 as f64,
            });
        } else {
            let (l, r) = (left[i], right[i]);
            if l < 0 || r < 0 || l as usize >= n || r as usize >= n || feature[i] < 0 {
                return Err(IbugError::parse(format!("trees[{id}] node {i}"), "bad child or feature index"));
            }
            nodes.push(Node::Internal {
                feature: feature[i] as usize,
                threshold: f32_less_than_bound(cond[i] as f32),
                missing_goes_left: default_left[i] != 0,
                left: usize::MAX,
                right: usize::MAX,
                gain: gain[i],
            });
            stack.push((r as usize, Some((slot, false))));
            stack.push((l as usize, Some((slot, true))));
        }
        if let Some((p, is_left)) = parent {
            if let Node::Internal { left, right, .. } = &mut nodes[p] {
                if is_left {
                    *left = slot;
                } else {
                    *right = slot;
                }
            }
        }
    }
    let original: Vec<i64> = leaves;
    Tree::new(nodes)
        .map_err(|e| IbugError::parse(format!("trees[{id}]"), e.to_string()))
        .map(|tree| tree.with_original_leaf_ids(original))
}

/// Largest `f64` value `t` such that `(t as f32) < split`, so that
/// `x <= t` holds exactly when `(x as f32) < split` for non-NaN `x`.
pub(crate) fn f32_less_than_bound(split: f32) -> f64 {
    if split.is_nan() || split == f32::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if split == f32::INFINITY {
        // values at or above MAX + ulp/2 round to infinity
        let boundary = f32::MAX as f64 + 2f64.powi(103);
        return boundary.next_down();
    }
    let below = split.next_down();
    if below == f32::NEG_INFINITY {
        // split is -f32::MAX: only values that round to -inf qualify
        let boundary = -(f32::MAX as f64) - 2f64.powi(103);
        return boundary;
    }
    // exact in f64: adjacent f32 values differ in one extra bit
    let mid = 0.5 * (below as f64 + split as f64);
    // ties round to the even significand
    if below.to_bits() & 1 == 0 {
        mid
    } else {
        mid.next_down()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bound_matches_f32_comparison(split in any::<f32>().prop_filter("finite", |s| s.is_finite()),
                                        x in any::<f64>().prop_filter("not nan", |x| !x.is_nan())) {
            let t = f32_less_than_bound(split);
            prop_assert_eq!(x <= t, (x as f32) < split);
        }

        #[test]
        fn bound_is_tight(split in any::<f32>().prop_filter("finite", |s| s.is_finite() && *s != -f32::MAX)) {
            let t = f32_less_than_bound(split);
            prop_assert!((t as f32) < split);
            prop_assert!(!((t.next_up() as f32) < split));
        }
    }

    #[test]
    fn bound_near_split() {
        for split in [0.0f32, -0.0, 1.0, -1.0, 0.026739303, 1e-40, f32::MIN_POSITIVE] {
            let t = f32_less_than_bound(split);
            for x in [t, t.next_up(), split as f64, (split as f64).next_down()] {
                assert_eq!(x <= t, (x as f32) < split, "split {split} x {x}");
            }
        }
    }

    const SMALL: &str = r#"{"learner":{
        "objective":{"name":"reg:squarederror"},
        "learner_model_param":{"base_score":"[5E-1]","num_class":"0","num_feature":"2","num_target":"1"},
        "gradient_booster":{"name":"gbtree","model":{"tree_info":[0],"trees":[{
            "left_children":[1,-1,-1],"right_children":[2,-1,-1],"split_indices":[1,0,0],
            "split_conditions":[0.5,-1.25,2.0],"default_left":[0,0,0],"loss_changes":[3.0,0,0],
            "split_type":[0,0,0],"tree_param":{"size_leaf_vector":"1"}}]}}},"version":[3,2,0]}"#;

    #[test]
    fn small_model() {
        let m = parse(SMALL.as_bytes()).unwrap();
        assert_eq!(m.base_score(), 0.5);
        assert_eq!(m.predict(&[0.0, 0.4]).unwrap(), -0.75);
        // strict less-than: the split value itself goes right
        assert_eq!(m.predict(&[0.0, 0.5]).unwrap(), 2.5);
        assert_eq!(m.predict(&[0.0, f64::NAN]).unwrap(), 2.5);
        assert_eq!(m.trees()[0].original_leaf_ids(), Some(&[1i64, 2][..]));
    }

    #[test]
    fn classification_rejected() {
        let text = SMALL.replace("reg:squarederror", "binary:logistic");
        assert!(matches!(parse(text.as_bytes()), Err(IbugError::UnsupportedModel(_))));
        let text = SMALL.replace("\"num_target\":\"1\"", "\"num_target\":\"2\"");
        assert!(matches!(parse(text.as_bytes()), Err(IbugError::UnsupportedModel(_))));
        let text = SMALL.replace("\"split_type\":[0,0,0]", "\"split_type\":[1,0,0]");
        assert!(matches!(parse(text.as_bytes()), Err(IbugError::UnsupportedModel(_))));
    }

    #[test]
    fn truncated_json_reports_position() {
        assert!(matches!(
            parse(&SMALL.as_bytes()[..100]),
            Err(IbugError::Parse { .. })
        ));
    }
}
