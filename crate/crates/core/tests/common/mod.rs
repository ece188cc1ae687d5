#![allow(dead_code)]

pub mod oracles;

use ibug::dataset::Dataset;
use ibug::gbrt::{train, Ensemble, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform features in [-2, 2] with a fraction of missing cells; targets are a
/// smooth function of the first two features plus noise.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, missing: f64) -> Dataset {
    let mut rows = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..p)
            .map(|_| {
                if rng.random::<f64>() < missing {
                    f64::NAN
                } else {
                    rng.random_range(-2.0..2.0)
                }
            })
            .collect();
        let a = if row[0].is_nan() { 0.5 } else { row[0] };
        let b = if p > 1 && !row[1].is_nan() { row[1] } else { -0.3 };
        ys.push(a.sin() * 3.0 + b * b + rng.random_range(-0.5..0.5));
        rows.push(row);
    }
    Dataset::from_rows(rows, ys).unwrap()
}

/// Integer-valued features, so many instances tie on every split.
pub fn coarse_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(0..4) as f64).collect())
        .collect();
    let ys = rows.iter().map(|r| r[0] * 2.0 - r[p - 1] + rng.random_range(-1.0..1.0)).collect();
    Dataset::from_rows(rows, ys).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, data: &Dataset, max_trees: usize) -> Ensemble {
    let cfg = TrainConfig {
        n_trees: rng.random_range(1..=max_trees),
        learning_rate: 0.3,
        max_depth: Some(rng.random_range(1..=4)),
        min_leaf_size: rng.random_range(1..=5),
        ..TrainConfig::default()
    };
    train(data, &cfg).unwrap()
}
