use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use ibug::affinity::select_trees;
use ibug::dataset::{Dataset, FeatureTable};
use ibug::gbrt::{train, Ensemble, TrainConfig};
use ibug::harness::config::RunConfig;
use ibug::harness::{benchmark_timing, run_cv, write_timing_csv, CvSetup, Method, Scenario};
use ibug::leaf_index::LeafIndex;
use ibug::metrics::{crps, nll};
use ibug::model_io::{parse_model, to_native_json, DumpFormat};
use ibug::posterior::{predict_probabilistic, DistributionFamily, PosteriorConfig, DEFAULT_RHO};
use ibug::tuning::{tune, CandidateGrids, TuneReport};
use ibug::IbugError;

#[derive(Parser)]
#[command(name = "ibug", version, about = "Probabilistic predictions from gradient-boosted tree ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a native model on --data and write it as JSON
    Train(RunConfig),
    /// Build the leaf index of --model over --data and write the cache to --out
    Index(RunConfig),
    /// Tune k, rho, gamma, delta and the family on --val; writes a tune report
    Tune(RunConfig),
    /// Write one JSON line per --input row
    Predict(RunConfig),
    /// Cross-validated benchmark; writes a scores CSV and a summary JSON
    Bench(RunConfig),
    /// Prediction time and NLL over --tau-grid for the rows of --input
    Timing(RunConfig),
    /// Per-tree mean fraction of training rows sharing a probe's leaf
    LeafDensity(RunConfig),
}

enum Failure {
    Usage(String),
    Run(IbugError),
}

impl From<IbugError> for Failure {
    fn from(e: IbugError) -> Self {
        Failure::Run(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(e.into())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Outcome<()> {
    let (opts, handler): (RunConfig, fn(&RunConfig) -> Outcome<()>) = match command {
        Command::Train(o) => (o, cmd_train),
        Command::Index(o) => (o, cmd_index),
        Command::Tune(o) => (o, cmd_tune),
        Command::Predict(o) => (o, cmd_predict),
        Command::Bench(o) => (o, cmd_bench),
        Command::Timing(o) => (o, cmd_timing),
        Command::LeafDensity(o) => (o, cmd_leaf_density),
    };
    let opts = opts.resolve()?;
    if let Some(n) = opts.thread_count()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| IbugError::InvalidInput(format!("thread pool: {e}")))?;
    }
    handler(&opts)
}

fn output(path: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Outcome<&'a T> {
    match value {
        Some(v) => Ok(v),
        None => usage(format!("--{flag} is required")),
    }
}

/// Training data from --data, or the generated --scenario.
fn training_data(opts: &RunConfig) -> Outcome<Dataset> {
    match (&opts.data, opts.scenario) {
        (Some(path), _) => Ok(Dataset::load_csv(path, opts.target())?),
        (None, Some(name)) => Ok(Scenario::new(name).generate(opts.scenario_seed.unwrap_or(0))?.data),
        (None, None) => usage("--data or --scenario is required"),
    }
}

/// Trainer settings: the scenario's defaults (if any) under explicit flags.
fn train_config(opts: &RunConfig) -> TrainConfig {
    let base = opts.scenario.map(|s| Scenario::new(s).train).unwrap_or_default();
    let flags = opts.train_config();
    let d = TrainConfig::default();
    TrainConfig {
        n_trees: if opts.n_trees.is_some() { flags.n_trees } else { base.n_trees },
        learning_rate: if opts.learning_rate.is_some() { flags.learning_rate } else { base.learning_rate },
        max_depth: if opts.max_depth.is_some() { flags.max_depth } else { base.max_depth },
        min_leaf_size: if opts.min_leaf_size.is_some() { flags.min_leaf_size } else { base.min_leaf_size },
        lambda: if opts.lambda.is_some() { flags.lambda } else { base.lambda },
        subsample_fraction: if opts.subsample.is_some() { flags.subsample_fraction } else { base.subsample_fraction },
        seed: opts.train_seed.unwrap_or(d.seed),
    }
}

fn load_model(opts: &RunConfig) -> Outcome<Ensemble> {
    let path = require(&opts.model, "model")?;
    let bytes = std::fs::read(path)?;
    let format = match &opts.model_format {
        Some(f) => f.parse::<DumpFormat>()?,
        None => DumpFormat::detect(path, &bytes)?,
    };
    Ok(parse_model(&bytes, format)?)
}

/// The cached index from --index, or one built over the training data.
fn load_index(opts: &RunConfig, model: &Ensemble) -> Outcome<LeafIndex> {
    match &opts.index {
        Some(path) => {
            let data_key = match opts.data.is_some() || opts.scenario.is_some() {
                true => Some(LeafIndex::cache_key(model, &training_data(opts)?).1),
                false => None,
            };
            Ok(LeafIndex::load_cache(path, &LeafIndex::model_key(model), data_key.as_ref())?)
        }
        None => Ok(LeafIndex::build(model, &training_data(opts)?)?),
    }
}

fn cmd_train(opts: &RunConfig) -> Outcome<()> {
    let data = training_data(opts)?;
    let model = train(&data, &train_config(opts))?;
    let mut out = output(opts.out.as_deref())?;
    writeln!(out, "{}", to_native_json(&model))?;
    out.flush()?;
    Ok(())
}

fn cmd_index(opts: &RunConfig) -> Outcome<()> {
    let out = require(&opts.out, "out")?;
    let model = load_model(opts)?;
    let data = training_data(opts)?;
    let index = LeafIndex::build(&model, &data)?;
    index.save_cache(out, &LeafIndex::cache_key(&model, &data))?;
    Ok(())
}

fn grids(opts: &RunConfig, n_train: usize) -> CandidateGrids {
    let mut g = CandidateGrids::standard(n_train).with_metric(opts.metric.unwrap_or_default());
    if let Some(k) = &opts.k_grid {
        g.k_grid = k.clone();
    }
    if let Some(f) = &opts.families {
        g.family_grid = f.clone();
    }
    g
}

fn cmd_tune(opts: &RunConfig) -> Outcome<()> {
    let model = load_model(opts)?;
    let index = load_index(opts, &model)?;
    let val = Dataset::load_csv(require(&opts.val, "val")?, opts.target())?;
    let trees = select_trees(model.n_trees(), &opts.tree_subset(model.n_trees()))?;
    let grids = grids(opts, index.n_train());
    let result = tune(&val, &model, &index, &trees, &grids)?;
    let report = TuneReport::new(&result, &grids);
    let mut out = output(opts.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(io::Error::other)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Posterior settings from flags, then the tune report, then defaults.
fn posterior_config(opts: &RunConfig) -> Outcome<PosteriorConfig> {
    let chosen = match &opts.tune_report {
        Some(path) => {
            let report: TuneReport = serde_json::from_slice(&std::fs::read(path)?).map_err(|e| IbugError::Parse {
                location: format!("line {}, column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
            Some(report.chosen)
        }
        None => None,
    };
    let k = match (opts.k, chosen) {
        (Some(k), _) => k,
        (None, Some(c)) => c.k,
        (None, None) => return usage("--k or --tune-report is required"),
    };
    let cfg = PosteriorConfig {
        k,
        rho: opts.rho.or(chosen.map(|c| c.rho)).unwrap_or(DEFAULT_RHO),
        gamma: opts.gamma.or(chosen.map(|c| c.gamma)).unwrap_or(1.0),
        delta: opts.delta.or(chosen.map(|c| c.delta)).unwrap_or(0.0),
        family: opts.family.or(chosen.map(|c| c.family)).unwrap_or(DistributionFamily::Normal),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_predict(opts: &RunConfig) -> Outcome<()> {
    let model = load_model(opts)?;
    let index = load_index(opts, &model)?;
    let cfg = posterior_config(opts)?;
    let table = FeatureTable::load(require(&opts.input, "input")?, opts.target())?;
    if table.names.len() != model.n_features() {
        return Err(IbugError::InvalidInput(format!(
            "input has {} feature columns, the model expects {}",
            table.names.len(),
            model.n_features()
        ))
        .into());
    }
    let trees = select_trees(model.n_trees(), &opts.tree_subset(model.n_trees()))?;
    let preds = (0..table.n_rows())
        .into_par_iter()
        .map(|i| predict_probabilistic(table.row(i), &model, &index, &trees, &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = output(opts.out.as_deref())?;
    for p in &preds {
        serde_json::to_writer(&mut out, &p.record()).map_err(io::Error::other)?;
        writeln!(out)?;
    }
    out.flush()?;

    if let Some(ys) = &table.targets {
        let m = ys.len() as f64;
        let mean_nll = preds.iter().zip(ys).map(|(p, &y)| nll(&p.dist, y)).sum::<f64>() / m;
        let mut crps_sum = 0.0;
        for (p, &y) in preds.iter().zip(ys) {
            crps_sum += crps(&p.dist, y)?;
        }
        let summary = serde_json::json!({ "n": ys.len(), "nll": mean_nll, "crps": crps_sum / m, "config": cfg });
        match &opts.summary_out {
            Some(path) => std::fs::write(path, format!("{summary:#}\n"))?,
            None => eprintln!("{summary}"),
        }
    }
    Ok(())
}

fn cmd_bench(opts: &RunConfig) -> Outcome<()> {
    let data = training_data(opts)?;
    let method = opts.method.unwrap_or_default();
    let setup = CvSetup {
        train: train_config(opts),
        external_model: match method {
            Method::IbugExternalModel => Some(load_model(opts)?),
            _ => None,
        },
        knn_grid: None,
    };
    let protocol = opts.protocol();
    let mut g = grids(opts, data.n_rows());
    if opts.k_grid.is_none() {
        // clipped per fold to the inner training size
        g.k_grid = ibug::tuning::DEFAULT_K_GRID.to_vec();
    }
    let result = run_cv(&data, &protocol, method, &g, &setup)?;
    if let Some(path) = &opts.scores_out {
        result.write_scores_csv(BufWriter::new(File::create(path)?))?;
    }
    let mut out = output(opts.summary_out.as_deref().or(opts.out.as_deref()))?;
    serde_json::to_writer_pretty(&mut out, &result.summary()).map_err(io::Error::other)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_timing(opts: &RunConfig) -> Outcome<()> {
    let (train_set, probes) = match &opts.input {
        Some(path) => (training_data(opts)?, Dataset::load_csv(path, opts.target())?),
        None => {
            // hold out the last tenth of the training data as probes
            let data = training_data(opts)?;
            let cut = data.n_rows() - (data.n_rows() / 10).max(1);
            let ids: Vec<usize> = (0..data.n_rows()).collect();
            (data.subset(&ids[..cut]), data.subset(&ids[cut..]))
        }
    };
    let model = match &opts.model {
        Some(_) => load_model(opts)?,
        None => train(&train_set, &train_config(opts))?,
    };
    let index = LeafIndex::build(&model, &train_set)?;
    let cfg = posterior_config(opts)?;
    let tau_grid = opts.tau_grid.clone().unwrap_or_else(|| vec![model.n_trees()]);
    let rows = benchmark_timing(
        &model,
        &index,
        &probes,
        &tau_grid,
        opts.tree_sample.unwrap_or(ibug::affinity::TreeSampling::FirstToLast),
        opts.seed.unwrap_or(0),
        &cfg,
    )?;
    let mut out = output(opts.out.as_deref())?;
    write_timing_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_leaf_density(opts: &RunConfig) -> Outcome<()> {
    let model = load_model(opts)?;
    let index = load_index(opts, &model)?;
    let probes = match &opts.input {
        Some(path) => Dataset::load_csv(path, opts.target())?,
        None => training_data(opts)?,
    };
    let density = index.leaf_density(&model, &probes)?;
    let mut out = output(opts.out.as_deref())?;
    writeln!(out, "tree,mean_fraction")?;
    for (t, d) in density.iter().enumerate() {
        writeln!(out, "{t},{d:?}")?;
    }
    out.flush()?;
    Ok(())
}
