//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its PASS/FAIL line regardless of output capture.
//!
//! Exits nonzero when a gating criterion fails. The wine anchor is
//! informational only and reports SKIP when its data file is absent.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracles::{brute_force_affinity, check_invariants, tuning_problem, NaiveSweep};
use ibug::affinity::{compute_affinities, select_trees, TreeSampling, TreeSubset};
use ibug::dataset::{Dataset, FeatureTable};
use ibug::gbrt::{train, Ensemble, TrainConfig};
use ibug::harness::{
    benchmark_timing, fold_partition, inner_split, run_cv, run_fold, CvSetup, Method, Protocol, Scenario,
    ScenarioName, SyntheticData,
};
use ibug::leaf_index::LeafIndex;
use ibug::metrics::{crps, crps_normal, crps_quadrature, ScoringRule};
use ibug::model_io::{parse_model, DumpFormat};
use ibug::posterior::{fit_distribution, DistributionFamily, FittedDistribution, PosteriorConfig};
use ibug::tuning::{fast_tune_k, tune, tune_calibration, CandidateGrids};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StudentT, Weibull};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed < limit
}

/// A scenario split the way fold 0 of the default protocol splits it.
struct Split {
    inner: Dataset,
    val: Dataset,
    test: Dataset,
    synthetic: SyntheticData,
}

fn fold0_split(scenario: &Scenario, seed: u64) -> Split {
    let synthetic = scenario.generate(seed).unwrap();
    let data = &synthetic.data;
    let p = Protocol::default();
    let folds = fold_partition(data.n_rows(), p.n_folds, p.seed).unwrap();
    let test_ids = folds[0].clone();
    let outer: Vec<usize> = (0..data.n_rows()).filter(|i| test_ids.binary_search(i).is_err()).collect();
    let (inner_ids, val_ids) = inner_split(&outer, p.val_fraction, p.seed, 0).unwrap();
    Split {
        inner: data.subset(&inner_ids),
        val: data.subset(&val_ids),
        test: data.subset(&test_ids),
        synthetic,
    }
}

fn all_trees(model: &Ensemble) -> Vec<usize> {
    (0..model.n_trees()).collect()
}

fn affinity_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = common::rng(1001);
    let mut probes_checked = 0;
    for case in 0..50 {
        let n = rng.random_range(20..=500);
        let p = rng.random_range(1..=6);
        let data = if case % 4 == 0 {
            common::coarse_dataset(&mut rng, n, p)
        } else {
            common::random_dataset(&mut rng, n, p, 0.1)
        };
        let model = common::random_model(&mut rng, &data, 20);
        let index = LeafIndex::build(&model, &data).unwrap();
        let all = all_trees(&model);
        let tau = rng.random_range(1..=model.n_trees());
        let some = select_trees(
            model.n_trees(),
            &TreeSubset {
                strategy: TreeSampling::UniformRandom,
                tau,
                seed: case,
            },
        )
        .unwrap();
        let probes = common::random_dataset(&mut rng, 10, p, 0.2);
        for x in probes.rows().chain(data.rows().take(5)) {
            for trees in [&all, &some] {
                let got = compute_affinities(x, &model, &index, trees).unwrap();
                if got.counts != brute_force_affinity(x, &model, &data, trees) {
                    return Outcome::Fail(format!("case {case}: counts differ from the double loop"));
                }
                probes_checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    pass_if(
        within(Duration::from_secs(30), elapsed),
        format!("50 pairs, {probes_checked} affinity vectors identical, {elapsed:.2?}"),
    )
}

fn tuning_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let pb = tuning_problem(seed);
        let grids = CandidateGrids::standard(pb.train.n_rows());
        let fast = fast_tune_k(&pb.val, &pb.model, &pb.index, &grids, &all_trees(&pb.model)).unwrap();
        let naive = NaiveSweep::run(&pb, &grids.k_grid);
        for (j, row) in naive.scores.iter().enumerate() {
            for (c, &want) in row.iter().enumerate() {
                worst = worst.max((fast.scores[j][c] - want).abs() / want.abs().max(1.0));
            }
        }
        let k = grids.k_grid[naive.best()];
        if fast.k != k {
            return Outcome::Fail(format!("problem {seed}: chose k = {} but the naive sweep picks {k}", fast.k));
        }
    }
    let elapsed = start.elapsed();
    pass_if(
        worst <= 1e-12 && within(Duration::from_secs(60), elapsed),
        format!("10 problems, same k, worst score error {worst:.1e}, {elapsed:.2?}"),
    )
}

fn crps_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let mu = -20.0 + 4.5 * i as f64;
        for j in 0..10 {
            let sd = 0.05 * 1.6f64.powi(j);
            for l in 0..10 {
                let y = mu + sd * (-6.0 + 1.4 * l as f64);
                let d = FittedDistribution::Normal { mean: mu, sd };
                worst = worst.max((crps_normal(mu, sd, y) - crps_quadrature(&d, y).unwrap()).abs());
            }
        }
    }
    let anchor = crps(&FittedDistribution::Normal { mean: 0.0, sd: 1.0 }, 0.0).unwrap();
    pass_if(
        worst <= 1e-5 && (anchor - 0.23370).abs() <= 1e-4,
        format!("1000-point grid worst {worst:.1e}, CRPS(N(0,1), 0) = {anchor:.5}"),
    )
}

fn calibration_no_harm() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for scenario in Scenario::packaged() {
        let split = fold0_split(&scenario, 0);
        let model = train(&split.inner, &scenario.train).unwrap();
        let index = LeafIndex::build(&model, &split.inner).unwrap();
        let trees = all_trees(&model);
        for metric in [ScoringRule::Nll, ScoringRule::Crps] {
            let grids = CandidateGrids::standard(split.inner.n_rows()).with_metric(metric);
            let k = fast_tune_k(&split.val, &model, &index, &grids, &trees).unwrap();
            let base = PosteriorConfig {
                rho: k.rho,
                ..PosteriorConfig::new(k.k)
            };
            let cal = tune_calibration(&split.val, &model, &index, &trees, &base, &grids).unwrap();
            let identity = cal.summaries[0].mean;
            let chosen = cal
                .candidates
                .iter()
                .position(|c| c.gamma == cal.gamma && c.delta == cal.delta)
                .map(|c| cal.summaries[c].mean)
                .unwrap();
            ok &= chosen <= identity;
            notes.push(format!("{}/{metric} {chosen:.4} <= {identity:.4}", scenario.name));
        }
    }
    pass_if(ok, notes.join(", "))
}

/// Spearman correlation with average ranks for ties.
fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &o in &order[i..=j] {
                r[o] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

fn heteroscedasticity_recovery() -> Outcome {
    let start = Instant::now();
    let scenario = Scenario::new(ScenarioName::Heteroscedastic);
    let synthetic = scenario.generate(0).unwrap();
    let grids = CandidateGrids {
        family_grid: vec![DistributionFamily::Normal],
        ..CandidateGrids::standard(synthetic.data.n_rows())
    };
    let setup = CvSetup {
        train: scenario.train.clone(),
        ..CvSetup::default()
    };
    let fold = run_fold(&synthetic.data, &Protocol::default(), 0, Method::IbugNative, &grids, &setup).unwrap();
    let predicted: Vec<f64> = fold.dists.iter().map(|d| d.variance()).collect();
    let truth: Vec<f64> = fold.test_ids.iter().map(|&i| synthetic.noise_sd[i].powi(2)).collect();
    let rho = spearman(&predicted, &truth);
    let covered = fold
        .dists
        .iter()
        .zip(&fold.y)
        .filter(|(d, &y)| d.quantile(0.05) <= y && y <= d.quantile(0.95))
        .count();
    let coverage = covered as f64 / fold.y.len() as f64;
    let elapsed = start.elapsed();
    let cfg = fold.ibug.unwrap();
    pass_if(
        rho >= 0.5 && (0.85..=0.95).contains(&coverage) && within(Duration::from_secs(120), elapsed),
        format!(
            "n = {}, Spearman {rho:.3}, 90% coverage {coverage:.3} over {} test rows (k = {}, gamma = {}, delta = {}), {elapsed:.2?}",
            synthetic.data.n_rows(),
            fold.y.len(),
            cfg.k,
            cfg.gamma,
            cfg.delta
        ),
    )
}

fn tree_subsampling() -> Outcome {
    let scenario = Scenario::new(ScenarioName::DenseLeaf);
    let split = fold0_split(&scenario, 0);
    let model = train(&split.inner, &scenario.train).unwrap();
    let index = LeafIndex::build(&model, &split.inner).unwrap();
    let t = model.n_trees();
    let grids = CandidateGrids {
        family_grid: vec![DistributionFamily::Normal],
        ..CandidateGrids::standard(split.inner.n_rows())
    };
    let cfg = tune(&split.val, &model, &index, &all_trees(&model), &grids).unwrap().config;
    let rows = benchmark_timing(&model, &index, &split.test, &[t, t / 10], TreeSampling::FirstToLast, 0, &cfg).unwrap();
    let (full, sub) = (rows[0], rows[1]);
    let speedup = full.affinity_seconds / sub.affinity_seconds;
    let increase = sub.mean_nll - full.mean_nll;
    pass_if(
        speedup >= 3.0 && increase <= 0.1,
        format!(
            "n = {}, T = {t}, tau = {}: affinity time {:.3} ms -> {:.3} ms ({speedup:.1}x), test NLL {:.4} -> {:.4} ({increase:+.4})",
            split.synthetic.data.n_rows(),
            t / 10,
            full.affinity_seconds * 1e3,
            sub.affinity_seconds * 1e3,
            full.mean_nll,
            sub.mean_nll
        ),
    )
}

fn draws<D: Distribution<f64>>(d: D, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = common::rng(seed);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

fn distribution_fits() -> Outcome {
    let ys = draws(Weibull::new(2.0, 1.5).unwrap(), 10_000, 2024);
    let FittedDistribution::Weibull { shape, scale, .. } =
        fit_distribution(DistributionFamily::Weibull, &ys, 0.0, 1.0).unwrap()
    else {
        return Outcome::Fail("Weibull fit returned another family".into());
    };
    let (shape_err, scale_err) = ((shape - 1.5).abs() / 1.5, (scale - 2.0).abs() / 2.0);

    let samples = [
        (draws(Normal::new(1.0, 2.0).unwrap(), 60, 1), 1.2, 3.5),
        (draws(Exp::new(0.7).unwrap(), 40, 2), 1.5, 2.0),
        (draws(StudentT::new(3.0).unwrap(), 80, 3), -0.2, 2.5),
    ];
    let mut fitted = 0;
    for (targets, mu, sigma2) in &samples {
        for family in DistributionFamily::ALL {
            let d = fit_distribution(family, targets, *mu, *sigma2).unwrap();
            // panics with the offending family on failure
            check_invariants(family.as_str(), &d);
            fitted += 1;
        }
    }
    pass_if(
        shape_err < 0.05 && scale_err < 0.05,
        format!(
            "Weibull shape {shape:.4} ({:.2}%), scale {scale:.4} ({:.2}%); {fitted} fits of the 9 families normalize and invert",
            shape_err * 100.0,
            scale_err * 100.0
        ),
    )
}

fn family_table(name: ScenarioName) -> Vec<(DistributionFamily, f64, bool)> {
    let scenario = Scenario::new(name);
    let split = fold0_split(&scenario, 0);
    let model = train(&split.inner, &scenario.train).unwrap();
    let index = LeafIndex::build(&model, &split.inner).unwrap();
    let grids = CandidateGrids::standard(split.inner.n_rows());
    let tuned = tune(&split.val, &model, &index, &all_trees(&model), &grids).unwrap();
    tuned.families.iter().map(|f| (f.family, f.mean, f.disqualified)).collect()
}

fn family_selection() -> Outcome {
    let mean_of = |table: &[(DistributionFamily, f64, bool)], family| {
        table.iter().find(|r| r.0 == family).map(|r| r.1).unwrap()
    };
    let heavy = family_table(ScenarioName::StudentT);
    let normal_t = mean_of(&heavy, DistributionFamily::Normal);
    let robust = mean_of(&heavy, DistributionFamily::StudentT).min(mean_of(&heavy, DistributionFamily::Laplace));

    let gauss = family_table(ScenarioName::Gaussian);
    let normal_g = mean_of(&gauss, DistributionFamily::Normal);
    let (winner, best) = gauss
        .iter()
        .filter(|r| !r.2)
        .fold((DistributionFamily::Normal, f64::INFINITY), |acc, r| if r.1 < acc.1 { (r.0, r.1) } else { acc });
    pass_if(
        robust < normal_t && normal_g - best <= 0.01,
        format!(
            "t3 noise: best of student-t/laplace {robust:.4} vs normal {normal_t:.4}; Gaussian noise: normal {normal_g:.4} vs winner {winner} {best:.4}"
        ),
    )
}

fn fixture(name: &str, file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).join(file)
}

fn external_parity() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, file, format) in [
        ("lightgbm_regression", "model.txt", DumpFormat::LightgbmText),
        ("xgboost_regression", "model.json", DumpFormat::XgboostJson),
    ] {
        let model = parse_model(&std::fs::read(fixture(name, file)).unwrap(), format).unwrap();
        let inputs = FeatureTable::load(fixture(name, "inputs.csv"), "prediction").unwrap();
        let recorded: Vec<f64> = std::fs::read_to_string(fixture(name, "predictions.csv"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.trim().parse().unwrap())
            .collect();
        ok &= recorded.len() == inputs.n_rows();
        let worst = (0..inputs.n_rows())
            .map(|i| (model.predict(inputs.row(i)).unwrap() - recorded[i]).abs())
            .fold(0.0, f64::max);
        ok &= worst <= 1e-6;
        notes.push(format!("{name}: {} rows, max error {worst:.1e}", inputs.n_rows()));
    }
    pass_if(ok, notes.join(", "))
}

/// Informational: a comma-separated wine quality file with a `quality`
/// column, at `IBUG_WINE_CSV` or `data/wine.csv` under the workspace root.
fn wine_anchor() -> Outcome {
    let path = std::env::var_os("IBUG_WINE_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/wine.csv"));
    if !path.exists() {
        return Outcome::Skip(format!("{} not found", path.display()));
    }
    let data = match Dataset::load_csv(&path, "quality") {
        Ok(d) => d,
        Err(e) => return Outcome::Skip(format!("cannot read {}: {e}", path.display())),
    };
    let setup = CvSetup {
        train: TrainConfig::default(),
        ..CvSetup::default()
    };
    let grids = CandidateGrids::standard(data.n_rows());
    let cv = run_cv(&data, &Protocol::default(), Method::IbugNative, &grids, &setup).unwrap();
    let crps = cv.summary().metrics["crps"].mean;
    let rel = (crps - 0.322).abs() / 0.322;
    let detail = format!("test CRPS {crps:.4}, {:.1}% from 0.322", rel * 100.0);
    if rel <= 0.25 {
        Outcome::Pass(detail)
    } else {
        Outcome::Skip(format!("{detail} (informational, outside 25%)"))
    }
}

fn main() -> ExitCode {
    // libtest options such as --nocapture are accepted and ignored; a name
    // filter that matches nothing here skips the suite
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }

    let criteria: [(&str, bool, fn() -> Outcome); 10] = [
        ("affinity oracle", true, affinity_oracle),
        ("accelerated tuning oracle", true, tuning_oracle),
        ("CRPS correctness", true, crps_correctness),
        ("calibration no-harm", true, calibration_no_harm),
        ("heteroscedasticity recovery", true, heteroscedasticity_recovery),
        ("tree-subsampling trade-off", true, tree_subsampling),
        ("distribution-fit recovery", true, distribution_fits),
        ("family selection", true, family_selection),
        ("external-model parity", true, external_parity),
        ("wine anchor (informational)", false, wine_anchor),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, gating, run)) in criteria.into_iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Outcome::Fail(msg)
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::Fail(d) => {
                if gating {
                    failed += 1;
                }
                ("FAIL", d)
            }
        };
        println!("{tag} [{:>2}] {name}: {detail}", i + 1);
    }
    if failed == 0 {
        println!("acceptance: all gating criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} gating criteria failed");
        ExitCode::FAILURE
    }
}
