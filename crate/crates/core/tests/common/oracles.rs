//! Independent reference computations shared by the integration tests.

use ibug::dataset::Dataset;
use ibug::gbrt::Ensemble;
use ibug::leaf_index::LeafIndex;
use ibug::posterior::FittedDistribution;
use rand::Rng;

/// Affinity by definition: for each training row, count the listed trees in
/// which it lands in the same leaf as `x`.
pub fn brute_force_affinity(x: &[f64], model: &Ensemble, train: &Dataset, trees: &[usize]) -> Vec<u32> {
    train
        .rows()
        .map(|xi| {
            trees
                .iter()
                .filter(|&&t| model.trees()[t].leaf_id(x) == model.trees()[t].leaf_id(xi))
                .count() as u32
        })
        .collect()
}

pub struct TuningProblem {
    pub train: Dataset,
    pub val: Dataset,
    pub model: Ensemble,
    pub index: LeafIndex,
}

/// A random problem with at most 500 rows, a quarter of them held out.
pub fn tuning_problem(seed: u64) -> TuningProblem {
    let mut rng = super::rng(seed);
    let n = rng.random_range(60..=500);
    let p = rng.random_range(1..=5);
    let data = if seed % 3 == 0 {
        super::coarse_dataset(&mut rng, n, p)
    } else {
        super::random_dataset(&mut rng, n, p, 0.1)
    };
    let n_val = n / 4;
    let ids: Vec<usize> = (0..n).collect();
    let val = data.subset(&ids[..n_val]);
    let train = data.subset(&ids[n_val..]);
    let model = super::random_model(&mut rng, &train, 20);
    let index = LeafIndex::build(&model, &train).unwrap();
    TuningProblem { train, val, model, index }
}

/// Neighbors of `x` from scratch: per-tree leaf comparison against every
/// training row, then a stable sort on descending count.
pub fn naive_neighbors(x: &[f64], model: &Ensemble, train: &Dataset, k: usize) -> Vec<usize> {
    let mut counts = vec![0u32; train.n_rows()];
    for tree in model.trees() {
        let leaf = tree.leaf_id(x);
        for (i, row) in train.rows().enumerate() {
            if tree.leaf_id(row) == leaf {
                counts[i] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    order.truncate(k);
    order
}

pub fn naive_variance(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let m = ys.iter().sum::<f64>() / n;
    ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / (n - 1.0)
}

pub fn gaussian_nll(mu: f64, var: f64, y: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * var).ln() + (y - mu) * (y - mu) / (2.0 * var)
}

/// Per-k recomputation of the k sweep.
pub struct NaiveSweep {
    /// `scores[row][c]`: Gaussian NLL with the unfloored neighborhood variance.
    pub scores: Vec<Vec<f64>>,
    /// `raw[c][row]`: the unbiased neighborhood variance.
    pub raw: Vec<Vec<f64>>,
    pub means: Vec<f64>,
}

impl NaiveSweep {
    pub fn run(pb: &TuningProblem, k_grid: &[usize]) -> Self {
        let mut sweep = NaiveSweep {
            scores: Vec::with_capacity(pb.val.n_rows()),
            raw: vec![Vec::new(); k_grid.len()],
            means: vec![0.0; k_grid.len()],
        };
        for (j, x) in pb.val.rows().enumerate() {
            let mu = pb.model.predict(x).unwrap();
            let y = pb.val.targets()[j];
            let mut row = Vec::with_capacity(k_grid.len());
            for (c, &k) in k_grid.iter().enumerate() {
                let ids = naive_neighbors(x, &pb.model, &pb.train, k);
                let ys: Vec<f64> = ids.iter().map(|&i| pb.train.targets()[i]).collect();
                let raw = naive_variance(&ys);
                sweep.raw[c].push(raw);
                let score = gaussian_nll(mu, raw.max(1e-15), y);
                sweep.means[c] += score / pb.val.n_rows() as f64;
                row.push(score);
            }
            sweep.scores.push(row);
        }
        sweep
    }

    /// First index of the smallest mean.
    pub fn best(&self) -> usize {
        let mut best = 0;
        for c in 1..self.means.len() {
            if self.means[c] < self.means[best] {
                best = c;
            }
        }
        best
    }

    /// Smallest nonzero variance at candidate `c`.
    pub fn rho(&self, c: usize) -> f64 {
        let rho = self.raw[c].iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
        if rho.is_finite() {
            rho
        } else {
            1e-15
        }
    }
}

// 7-point Gauss-Legendre on [a, b].
fn gl7(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const X: [f64; 4] = [0.0, 0.405_845_151_377_397_2, 0.741_531_185_599_394_4, 0.949_107_912_342_758_5];
    const W: [f64; 4] = [0.417_959_183_673_469_4, 0.381_830_050_505_118_9, 0.279_705_391_489_276_7, 0.129_484_966_168_869_7];
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut s = W[0] * f(c);
    for i in 1..4 {
        s += W[i] * (f(c - h * X[i]) + f(c + h * X[i]));
    }
    s * h
}

/// Bisects until the one-panel and two-panel rules agree.
fn quad(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let whole = gl7(f, a, b);
    let halves = gl7(f, a, m) + gl7(f, m, b);
    if depth == 0 || (whole - halves).abs() <= tol {
        halves
    } else {
        quad(f, a, m, tol / 2.0, depth - 1) + quad(f, m, b, tol / 2.0, depth - 1)
    }
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    // fixed pre-split so narrow spikes cannot hide between the first nodes
    let n = 64;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|i| quad(f, a + i as f64 * h, a + (i + 1) as f64 * h, 1e-12, 40))
        .sum()
}

/// Panics unless the density integrates to the mass between its 1e-8 tail
/// quantiles and quantile(cdf(y)) returns y.
pub fn check_invariants(label: &str, d: &FittedDistribution) {
    let (lo, hi) = (d.quantile(1e-8), d.quantile(1.0 - 1e-8));
    assert!(lo.is_finite() && hi.is_finite() && lo < hi, "{label}: tails [{lo}, {hi}]");
    let pdf = |y: f64| d.pdf(y);
    let mass = integrate(&pdf, lo, hi);
    let expected = 1.0 - 2e-8;
    assert!((mass - expected).abs() <= 1e-6, "{label}: mass {mass}");

    let mut prev = 0.0;
    for i in 1..200 {
        let p = i as f64 / 200.0;
        let y = d.quantile(p);
        assert!(d.pdf(y) >= 0.0, "{label}: negative density");
        let c = d.cdf(y);
        assert!(c >= prev, "{label}: cdf decreased at {y}");
        prev = c;
        let back = d.quantile(c);
        assert!((back - y).abs() <= 1e-8, "{label}: quantile(cdf({y})) = {back}");
    }
    assert!(d.cdf(lo - 1e6 * (hi - lo)) < 1e-8);
    assert!(d.cdf(hi + 1e6 * (hi - lo)) > 1.0 - 1e-8);
}
