//! Tabular regression data: a dense row-major feature matrix plus targets.
//!
//! Missing feature values are stored as `f64::NAN`. Targets must be finite.

use std::io::Write;
use std::path::Path;

use crate::error::{IbugError, Result};

/// Sentinel used for missing feature cells.
pub const MISSING: f64 = f64::NAN;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    targets: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Every row must have the same length.
    pub fn from_rows(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let p = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(IbugError::invalid("rows have differing lengths"));
        }
        let features = rows.into_iter().flatten().collect();
        Self::from_flat(features, p, targets)
    }

    pub fn from_flat(features: Vec<f64>, n_features: usize, targets: Vec<f64>) -> Result<Self> {
        if targets.is_empty() {
            return Err(IbugError::invalid("dataset is empty"));
        }
        if n_features == 0 {
            return Err(IbugError::invalid("dataset has no feature columns"));
        }
        if features.len() != n_features * targets.len() {
            return Err(IbugError::invalid(format!(
                "feature matrix has {} cells, expected {} x {}",
                features.len(),
                targets.len(),
                n_features
            )));
        }
        if let Some(i) = targets.iter().position(|y| !y.is_finite()) {
            return Err(IbugError::invalid(format!("target at row {i} is not finite")));
        }
        Ok(Dataset {
            features,
            n_features,
            targets,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(IbugError::invalid("feature name count does not match columns"));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.n_features)
    }

    #[inline]
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Row subset in the given order.
    pub fn subset(&self, ids: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(ids.len() * self.n_features);
        let mut targets = Vec::with_capacity(ids.len());
        for &i in ids {
            features.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Dataset {
            features,
            n_features: self.n_features,
            targets,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Column subset in the given order (used by the Euclidean baseline).
    pub fn select_features(&self, columns: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(self.n_rows() * columns.len());
        for row in self.rows() {
            features.extend(columns.iter().map(|&c| row[c]));
        }
        Dataset {
            features,
            n_features: columns.len(),
            targets: self.targets.clone(),
            feature_names: self
                .feature_names
                .as_ref()
                .map(|n| columns.iter().map(|&c| n[c].clone()).collect()),
        }
    }

    /// Little-endian bytes of the matrix and targets, used for content hashing.
    pub fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.features.len() + self.targets.len()));
        out.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_features as u64).to_le_bytes());
        for v in self.features.iter().chain(&self.targets) {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    /// Loads a CSV with a header row. `target_column` names the target; all
    /// remaining columns become features in file order. Empty feature cells
    /// become [`MISSING`].
    pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv(file, target_column)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, target_column: &str) -> Result<Self> {
        let table = read_table(reader, target_column, true)?;
        let p = table.names.len();
        Self::from_flat(table.features, p, table.targets.unwrap_or_default())?.with_feature_names(table.names)
    }

    /// Writes the dataset as CSV with the target as the last column. Values use
    /// the shortest representation that parses back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, mut out: W, target_column: &str) -> Result<()> {
        let names: Vec<String> = match &self.feature_names {
            Some(n) => n.clone(),
            None => (0..self.n_features).map(|i| format!("x{i}")).collect(),
        };
        writeln!(out, "{},{}", names.join(","), target_column)?;
        for (row, y) in self.rows().zip(&self.targets) {
            let mut line = String::new();
            for v in row {
                if !v.is_nan() {
                    line.push_str(&format!("{v:?}"));
                }
                line.push(',');
            }
            line.push_str(&format!("{y:?}"));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Feature rows read from CSV whose target column may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub names: Vec<String>,
    /// Row-major, missing cells as [`MISSING`].
    pub features: Vec<f64>,
    /// Present when the header contains the target column.
    pub targets: Option<Vec<f64>>,
}

impl FeatureTable {
    pub fn load(path: impl AsRef<Path>, target_column: &str) -> Result<Self> {
        read_table(std::fs::File::open(path.as_ref())?, target_column, false)
    }

    pub fn n_rows(&self) -> usize {
        self.features.len() / self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.names.len();
        &self.features[i * p..(i + 1) * p]
    }
}

fn read_table<R: std::io::Read>(reader: R, target_column: &str, require_target: bool) -> Result<FeatureTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IbugError::parse("header", e.to_string()))?
        .clone();
    let target_idx = headers.iter().position(|h| h.trim() == target_column);
    if require_target && target_idx.is_none() {
        return Err(IbugError::invalid(format!("target column '{target_column}' not found")));
    }
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != target_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    if names.is_empty() {
        return Err(IbugError::invalid("CSV has no feature columns"));
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // header is line 1
        let line = r + 2;
        let record = record.map_err(|e| IbugError::parse(format!("line {line}"), e.to_string()))?;
        if record.len() != headers.len() {
            return Err(IbugError::parse(
                format!("line {line}"),
                format!("expected {} cells, found {}", headers.len(), record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(c) == target_idx {
                if cell.is_empty() {
                    return Err(IbugError::invalid(format!("missing target at line {line}")));
                }
                targets.push(parse_cell(cell, line, c)?);
            } else if cell.is_empty() {
                features.push(MISSING);
            } else {
                features.push(parse_cell(cell, line, c)?);
            }
        }
    }
    Ok(FeatureTable {
        names,
        features,
        targets: target_idx.map(|_| targets),
    })
}

fn parse_cell(cell: &str, line: usize, column: usize) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| {
        IbugError::parse(
            format!("line {line}, column {}", column + 1),
            format!("cannot parse '{cell}' as a number"),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_csv() {
        let data = Dataset::read_csv("a,y\n1.5,2\n3,4\n".as_bytes(), "y").unwrap();
        assert_eq!(data.n_rows(), 2);
        assert_eq!(data.n_features(), 1);
        assert_eq!(data.targets(), &[2.0, 4.0]);
        assert_eq!(data.row(0), &[1.5]);
    }

    #[test]
    fn empty_feature_cell_is_missing() {
        let data = Dataset::read_csv("a,b,y\n1,,2\n".as_bytes(), "y").unwrap();
        assert_eq!(data.value(0, 0), 1.0);
        assert!(data.value(0, 1).is_nan());
    }

    #[test]
    fn empty_target_rejected() {
        let err = Dataset::read_csv("a,y\n1,\n".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, IbugError::InvalidInput(_)));
    }

    #[test]
    fn bad_cell_reports_position() {
        let err = Dataset::read_csv("a,y\n1,2\nfoo,3\n".as_bytes(), "y").unwrap_err();
        match err {
            IbugError::Parse { location, .. } => assert_eq!(location, "line 3, column 1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_target_rejected() {
        assert!(Dataset::from_rows(vec![vec![1.0]], vec![f64::INFINITY]).is_err());
        assert!(Dataset::from_rows(vec![], vec![]).is_err());
    }
}
