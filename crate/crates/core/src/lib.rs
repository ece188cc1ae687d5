//! Probabilistic predictions from gradient-boosted tree ensembles.
//!
//! A trained tree ensemble gives the point prediction. The training instances
//! that share the most leaves with a target give its variance and, optionally,
//! a fitted output distribution.

pub mod affinity;
pub mod dataset;
pub mod error;
pub mod gbrt;
pub mod harness;
pub mod leaf_index;
pub mod metrics;
pub mod model_io;
pub mod numeric;
pub mod posterior;
pub mod tuning;

pub use error::{IbugError, Result};
