//! Reading and writing tree-ensemble dumps.
//!
//! External leaf numbering is remapped to dense per-tree ids (ascending by the
//! original id); the original ids stay available through
//! [`Tree::original_leaf_ids`](crate::gbrt::Tree::original_leaf_ids).
//! External dumps already store shrunken leaf values, so parsed models use a
//! learning rate of 1.

mod lightgbm;
mod native;
mod xgboost;

use std::fmt;
use std::str::FromStr;

pub use native::{from_native_json, to_native_json, NATIVE_FORMAT_VERSION};

use crate::error::{IbugError, Result};
use crate::gbrt::Ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpFormat {
    LightgbmText,
    XgboostJson,
    NativeJson,
}

impl FromStr for DumpFormat {
    type Err = IbugError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lightgbm-text" => Ok(DumpFormat::LightgbmText),
            "xgboost-json" => Ok(DumpFormat::XgboostJson),
            "native-json" => Ok(DumpFormat::NativeJson),
            other => Err(IbugError::invalid(format!("unknown model format '{other}'"))),
        }
    }
}

impl fmt::Display for DumpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DumpFormat::LightgbmText => "lightgbm-text",
            DumpFormat::XgboostJson => "xgboost-json",
            DumpFormat::NativeJson => "native-json",
        })
    }
}

impl DumpFormat {
    /// Guesses the format from a file extension (`.txt`, `.json`) and, for
    /// JSON, from the top-level keys.
    pub fn detect(path: &std::path::Path, bytes: &[u8]) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt") => Ok(DumpFormat::LightgbmText),
            Some("json") => {
                let head = String::from_utf8_lossy(&bytes[..bytes.len().min(4096)]);
                if head.contains("\"learner\"") {
                    Ok(DumpFormat::XgboostJson)
                } else {
                    Ok(DumpFormat::NativeJson)
                }
            }
            _ => Err(IbugError::invalid(format!(
                "cannot infer model format of {}",
                path.display()
            ))),
        }
    }
}

/// Parses a complete model dump.
pub fn parse_model(bytes: &[u8], format: DumpFormat) -> Result<Ensemble> {
    match format {
        DumpFormat::LightgbmText => {
            let text = std::str::from_utf8(bytes)
                .map_err(|e| IbugError::parse(format!("byte {}", e.valid_up_to()), "invalid UTF-8"))?;
            lightgbm::parse(text)
        }
        DumpFormat::XgboostJson => xgboost::parse(bytes),
        DumpFormat::NativeJson => from_native_json(bytes),
    }
}

/// Parses `(original_id, node)` leaves into dense ids ordered by original id.
pub(crate) fn dense_leaf_ids(original: &[i64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..original.len()).collect();
    order.sort_by_key(|&i| original[i]);
    let mut dense = vec![0; original.len()];
    for (rank, i) in order.into_iter().enumerate() {
        dense[i] = rank;
    }
    dense
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_tags() {
        for tag in ["lightgbm-text", "xgboost-json", "native-json"] {
            assert_eq!(tag.parse::<DumpFormat>().unwrap().to_string(), tag);
        }
        assert!(matches!(
            "catboost-bin".parse::<DumpFormat>(),
            Err(IbugError::InvalidInput(_))
        ));
    }

    #[test]
    fn dense_ids_follow_original_order() {
        assert_eq!(dense_leaf_ids(&[7, 3, 11, 5]), vec![2, 0, 3, 1]);
    }
}
