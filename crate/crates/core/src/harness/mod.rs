//! Benchmark plumbing: synthetic scenarios, the cross-validation protocol,
//! the Euclidean kNN baseline, timing runs and run configuration.

pub mod config;
pub mod cv;
pub mod knn;
pub mod synthetic;
pub mod timing;

pub use cv::{fold_partition, inner_split, run_cv, run_fold, CvResult, CvSetup, CvSummary, FoldResult, Method, Protocol};
pub use knn::{knn_baseline, KnnBaselineConfig, KnnGrid, KnnOutcome};
pub use synthetic::{friedman_signal, NoiseKind, Scenario, ScenarioName, SyntheticData};
pub use timing::{benchmark_timing, write_timing_csv, TimingRow};
