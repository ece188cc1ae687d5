//! Versioned JSON serialization of [`Ensemble`].
//!
//! Floats are written in the shortest decimal form that parses back to the
//! same bits, so a save/load cycle is lossless.

use serde::{Deserialize, Serialize};

use crate::error::{IbugError, Result};
use crate::gbrt::{Accumulation, Ensemble, Node, Tree};

pub const NATIVE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NativeModel {
    version: u32,
    base_score: f64,
    learning_rate: f64,
    lambda: f64,
    n_features: usize,
    #[serde(default)]
    accumulation: Accumulation,
    trees: Vec<NativeTree>,
}

#[derive(Serialize, Deserialize)]
struct NativeTree {
    nodes: Vec<Node>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    original_leaf_ids: Option<Vec<i64>>,
}

pub fn to_native_json(model: &Ensemble) -> String {
    let doc = NativeModel {
        version: NATIVE_FORMAT_VERSION,
        base_score: model.base_score,
        learning_rate: model.learning_rate,
        lambda: model.lambda,
        n_features: model.n_features,
        accumulation: model.accumulation,
        trees: model
            .trees
            .iter()
            .map(|t| NativeTree {
                nodes: t.nodes().to_vec(),
                original_leaf_ids: t.original_leaf_ids().map(<[i64]>::to_vec),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("model serialization cannot fail")
}

pub fn from_native_json(bytes: &[u8]) -> Result<Ensemble> {
    let doc: NativeModel = serde_json::from_slice(bytes).map_err(|e| {
        IbugError::parse(format!("line {}, column {}", e.line(), e.column()), e.to_string())
    })?;
    if doc.version != NATIVE_FORMAT_VERSION {
        return Err(IbugError::UnsupportedModel(format!(
            "native model version {} (expected {NATIVE_FORMAT_VERSION})",
            doc.version
        )));
    }
    let trees = doc
        .trees
        .into_iter()
        .map(|t| {
            let tree = Tree::new(t.nodes)?;
            Ok(match t.original_leaf_ids {
                Some(ids) if ids.len() == tree.n_leaves() => tree.with_original_leaf_ids(ids),
                Some(_) => return Err(IbugError::invalid("original_leaf_ids length mismatch")),
                None => tree,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(
        Ensemble::new(doc.base_score, doc.learning_rate, doc.lambda, doc.n_features, trees)?
            .with_accumulation(doc.accumulation),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let tree = Tree::new(vec![
            Node::Internal {
                feature: 1,
                threshold: 0.1 + 0.2,
                missing_goes_left: false,
                left: 1,
                right: 2,
                gain: 1.0 / 3.0,
            },
            Node::Leaf {
                leaf_id: 0,
                value: -1e-300,
            },
            Node::Leaf {
                leaf_id: 1,
                value: std::f64::consts::PI,
            },
        ])
        .unwrap();
        let model = Ensemble::new(0.123456789012345678, 0.07, 1.5, 3, vec![tree]).unwrap();
        let json = to_native_json(&model);
        let back = from_native_json(json.as_bytes()).unwrap();
        assert_eq!(back, model);
        assert_eq!(to_native_json(&back), json);
    }

    #[test]
    fn infinite_threshold_survives() {
        let tree = Tree::new(vec![
            Node::Internal {
                feature: 0,
                threshold: f64::INFINITY,
                missing_goes_left: false,
                left: 1,
                right: 2,
                gain: 0.5,
            },
            Node::Leaf { leaf_id: 0, value: 1.0 },
            Node::Leaf { leaf_id: 1, value: 2.0 },
        ])
        .unwrap();
        let model = Ensemble::new(0.0, 1.0, 0.0, 1, vec![tree]).unwrap();
        let json = to_native_json(&model);
        assert!(json.contains("\"threshold\":\"inf\""), "{json}");
        let back = from_native_json(json.as_bytes()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.predict(&[f64::NAN]).unwrap(), 2.0);
        assert_eq!(back.predict(&[1e308]).unwrap(), 1.0);
    }

    #[test]
    fn malformed_reports_position() {
        let err = from_native_json(b"{\"version\": 1,\n \"base_score\": oops}").unwrap_err();
        match err {
            IbugError::Parse { location, .. } => assert!(location.starts_with("line 2"), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_version_rejected() {
        let json = r#"{"version":9,"base_score":0,"learning_rate":1,"lambda":0,"n_features":1,"trees":[]}"#;
        assert!(matches!(
            from_native_json(json.as_bytes()),
            Err(IbugError::UnsupportedModel(_))
        ));
    }
}
