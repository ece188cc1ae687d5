//! LightGBM text model files (`Tree=` stanzas).

use std::collections::HashMap;

use super::dense_leaf_ids;
use crate::error::{IbugError, Result};
use crate::gbrt::{Ensemble, Node, Tree};

const CATEGORICAL_MASK: i64 = 1;
const DEFAULT_LEFT_MASK: i64 = 2;

/// Objectives whose raw score is the prediction (identity link).
const IDENTITY_OBJECTIVES: &[&str] = &[
    "regression",
    "regression_l2",
    "l2",
    "mse",
    "mean_squared_error",
    "rmse",
    "root_mean_squared_error",
    "regression_l1",
    "l1",
    "mae",
    "huber",
    "fair",
    "quantile",
];

/// `key=value` lines of one section with the line number of each key.
struct Section<'a> {
    name: String,
    fields: HashMap<&'a str, (usize, &'a str)>,
}

impl<'a> Section<'a> {
    fn get(&self, key: &str) -> Result<(usize, &'a str)> {
        self.fields
            .get(key)
            .copied()
            .ok_or_else(|| IbugError::parse(self.name.clone(), format!("missing field '{key}'")))
    }

    fn opt(&self, key: &str) -> Option<&'a str> {
        self.fields.get(key).map(|(_, v)| *v)
    }

    fn scalar<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (line, v) = self.get(key)?;
        v.trim()
            .parse()
            .map_err(|_| IbugError::parse(format!("line {line}"), format!("bad value for '{key}'")))
    }

    fn array<T: std::str::FromStr>(&self, key: &str, expected: usize) -> Result<Vec<T>> {
        let (line, v) = self.get(key)?;
        let out = v
            .split_whitespace()
            .map(|tok| {
                tok.parse().map_err(|_| {
                    IbugError::parse(format!("line {line}"), format!("bad number '{tok}' in '{key}'"))
                })
            })
            .collect::<Result<Vec<T>>>()?;
        if out.len() != expected {
            return Err(IbugError::parse(
                format!("line {line}"),
                format!("'{key}' has {} entries, expected {expected}", out.len()),
            ));
        }
        Ok(out)
    }
}

/// Splits the file into the header and one section per tree. Returns `None`
/// when the `end of trees` line is missing, which means the file was cut short.
fn sections(text: &str) -> Option<Vec<Section<'_>>> {
    let mut out = vec![Section {
        name: "header".to_string(),
        fields: HashMap::new(),
    }];
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end();
        if line == "end of trees" {
            return Some(out);
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        if key == "Tree" {
            out.push(Section {
                name: format!("line {line_no} (Tree={value})"),
                fields: HashMap::new(),
            });
            continue;
        }
        out.last_mut()
            .expect("header section always present")
            .fields
            .entry(key)
            .or_insert((line_no, value));
    }
    None
}

pub(super) fn parse(text: &str) -> Result<Ensemble> {
    let n_lines = text.lines().count();
    let Some(mut secs) = sections(text) else {
        if !text.lines().any(|l| l.starts_with("Tree=") || l.starts_with("max_feature_idx=")) {
            return Err(IbugError::parse("line 1", "not a LightGBM text model"));
        }
        return Err(IbugError::parse(
            format!("line {n_lines}"),
            "file ends before 'end of trees'",
        ));
    };
    let header = secs.remove(0);
    if let Some((line, sizes)) = header.fields.get("tree_sizes") {
        let declared = sizes.split_whitespace().count();
        if declared != secs.len() {
            return Err(IbugError::parse(
                format!("line {line}"),
                format!("tree_sizes lists {declared} trees but {} were found", secs.len()),
            ));
        }
    }

    let num_class: usize = header.scalar("num_class").unwrap_or(1);
    let per_iter: usize = header.scalar("num_tree_per_iteration").unwrap_or(1);
    if num_class != 1 || per_iter != 1 {
        return Err(IbugError::UnsupportedModel(format!(
            "multi-output model (num_class={num_class}, num_tree_per_iteration={per_iter})"
        )));
    }
    let objective = header
        .opt("objective")
        .and_then(|o| o.split_whitespace().next())
        .unwrap_or("regression");
    if !IDENTITY_OBJECTIVES.contains(&objective) {
        return Err(IbugError::UnsupportedModel(format!(
            "objective '{objective}' is not an identity-link regression objective"
        )));
    }
    let n_features = header.scalar::<usize>("max_feature_idx")? + 1;

    let trees = secs.iter().map(parse_tree).collect::<Result<Vec<_>>>()?;
    Ensemble::new(0.0, 1.0, 0.0, n_features, trees)
}

fn parse_tree(sec: &Section<'_>) -> Result<Tree> {
    let num_leaves: usize = sec.scalar("num_leaves")?;
    if num_leaves == 0 {
        return Err(IbugError::parse(sec.name.clone(), "num_leaves is zero"));
    }
    if sec.opt("num_cat").is_some_and(|v| v.trim() != "0") {
        return Err(IbugError::UnsupportedModel(format!(
            "{}: categorical splits are not supported",
            sec.name
        )));
    }
    if sec.opt("is_linear").is_some_and(|v| v.trim() == "1") {
        return Err(IbugError::UnsupportedModel(format!("{}: linear trees", sec.name)));
    }
    let leaf_value: Vec<f64> = sec.array("leaf_value", num_leaves)?;
    if num_leaves == 1 {
        return Ok(Tree::single_leaf(leaf_value[0]).with_original_leaf_ids(vec![0]));
    }

    let n_internal = num_leaves - 1;
    let split_feature: Vec<usize> = sec.array("split_feature", n_internal)?;
    let threshold: Vec<f64> = sec.array("threshold", n_internal)?;
    let decision_type: Vec<i64> = sec.array("decision_type", n_internal)?;
    let left_child: Vec<i64> = sec.array("left_child", n_internal)?;
    let right_child: Vec<i64> = sec.array("right_child", n_internal)?;
    let split_gain: Vec<f64> = sec
        .array("split_gain", n_internal)
        .unwrap_or_else(|_| vec![0.0; n_internal]);

    let originals: Vec<i64> = (0..num_leaves as i64).collect();
    let dense = dense_leaf_ids(&originals);

    let mut nodes = Vec::with_capacity(2 * num_leaves - 1);
    // (child reference, parent arena slot, is_left)
    let mut stack: Vec<(i64, Option<(usize, bool)>)> = vec![(0, None)];
    while let Some((child, parent)) = stack.pop() {
        let slot = nodes.len();
        if child < 0 {
            let leaf = (-child - 1) as usize;
            if leaf >= num_leaves {
                return Err(IbugError::parse(sec.name.clone(), format!("leaf {leaf} out of range")));
            }
            nodes.push(Node::Leaf {
                leaf_id: dense[leaf],
                value: leaf_value[leaf],
            });
        } else {
            let i = child as usize;
            if i >= n_internal {
                return Err(IbugError::parse(sec.name.clone(), format!("node {i} out of range")));
            }
            let dt = decision_type[i];
            if dt & CATEGORICAL_MASK != 0 {
                return Err(IbugError::UnsupportedModel(format!(
                    "{}: categorical split at node {i}",
                    sec.name
                )));
            }
            let missing_goes_left = match (dt >> 2) & 3 {
                // no missing handling: NaN is read as 0.0
                0 => 0.0 <= threshold[i],
                2 => dt & DEFAULT_LEFT_MASK != 0,
                _ => {
                    return Err(IbugError::UnsupportedModel(format!(
                        "{}: zero-as-missing splits are not supported",
                        sec.name
                    )))
                }
            };
            nodes.push(Node::Internal {
                feature: split_feature[i],
                threshold: threshold[i],
                missing_goes_left,
                left: usize::MAX,
                right: usize::MAX,
                gain: split_gain[i],
            });
            stack.push((right_child[i], Some((slot, false))));
            stack.push((left_child[i], Some((slot, true))));
        }
        if nodes.len() > 2 * num_leaves {
            return Err(IbugError::parse(sec.name.clone(), "tree structure contains a cycle"));
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
    Tree::new(nodes)
        .map_err(|e| IbugError::parse(sec.name.clone(), e.to_string()))
        .map(|t| t.with_original_leaf_ids(originals))
}
