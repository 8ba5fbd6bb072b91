//! `tte` command-line driver: one subcommand per pipeline stage, each reading
//! and writing the CSV / JSON / JSON-lines files of the previous stage.
//!
//! Exit codes: 0 success, 1 data or model error, 2 usage error.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, kfold_cv, train_test_split, EvalReport};
use crate::features::{feature_vector, FeatureRecord, FEATURE_NAMES};
use crate::forest::{
    fit_forest, mdi_importance, predict_forest, random_search, ForestParams, Matrix, RegressionForest, SearchSpace,
};
use crate::netmodel::{NodeId, RoadNetwork, SpeedTable};
use crate::osm_ingest::{build_network, parse_osm_xml};
use crate::routing::{route_all, sample_from_whitelist, sample_od_pairs, OdPair, RouteRecord};
use crate::synth::{grid_network, synthetic_truth, ControlProbs, DelayModel, DEFAULT_SPEEDS_KPH};

#[derive(Debug, Parser)]
#[command(name = "tte", version, about = "Open-data travel-time estimation pipeline")]
pub struct Cli {
    /// Worker threads for routing, feature extraction and training (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse OSM XML into a drivable, strongly connected network cache.
    Build {
        #[arg(long)]
        osm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `highway_class,kph` CSV overriding the fallback speed table.
        #[arg(long)]
        speeds: Option<PathBuf>,
    },
    /// Sample origin/destination pairs at intersections and dead ends.
    SampleOd {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// `origin,destination` CSV; pairs are drawn from its rows instead.
        #[arg(long)]
        od_whitelist: Option<PathBuf>,
    },
    /// Shortest traversal-time routes for every OD pair (JSON lines).
    Route {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        od: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature CSV from routes.
    Features {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic lattice network cache.
    SynthNet {
        #[arg(long, default_value_t = 20)]
        rows: usize,
        #[arg(long, default_value_t = 20)]
        cols: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated speed choices in km/h.
        #[arg(long, value_delimiter = ',')]
        speeds: Option<Vec<f64>>,
        /// JSON object with per-kind control probabilities.
        #[arg(long)]
        control_probs: Option<PathBuf>,
    },
    /// Synthetic reference travel times for a feature CSV.
    SynthRef {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// DelayModel JSON; defaults are used for missing fields.
        #[arg(long)]
        delay_model: Option<PathBuf>,
    },
    /// Split a feature CSV into train and test files.
    Split {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
    /// Fit a random forest on features joined with reference times.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
    },
    /// Randomized hyperparameter search by k-fold CV MAE.
    Tune {
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        seed: u64,
        /// SearchSpace JSON; the built-in space is used when absent.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict travel times for a feature CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy report for predictions against reference times.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Baseline prediction CSV to compare against.
        #[arg(long, conflicts_with = "naive_features")]
        naive_pred: Option<PathBuf>,
        /// Feature CSV whose naive_tt_s column is the baseline.
        #[arg(long)]
        naive_features: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        model_id: String,
        #[arg(long, default_value = "dataset")]
        dataset_id: String,
        /// Fixed timestamp string instead of the current UTC time.
        #[arg(long)]
        timestamp: Option<String>,
        /// Report path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-fold MAE of k-fold cross-validation.
    Cv {
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        forest: ForestArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-decrease-in-impurity feature importances of a model.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 400)]
    pub trees: usize,
    #[arg(long, default_value_t = 10)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 2)]
    pub min_split: usize,
    /// Features considered per split (default: all).
    #[arg(long)]
    pub max_features: Option<usize>,
    #[arg(long)]
    pub no_bootstrap: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ForestArgs {
    fn params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.trees,
            max_depth: self.max_depth,
            min_samples_split: self.min_split,
            max_features: self.max_features,
            bootstrap: !self.no_bootstrap,
            seed: self.seed,
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Errors are reported on standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build().context("cannot start worker threads")?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Build { osm, out, speeds } => {
            let table = match speeds {
                Some(p) => SpeedTable::from_csv_reader(open(&p)?).with_context(|| format!("{}", p.display()))?,
                None => SpeedTable::default(),
            };
            let data = parse_osm_xml(BufReader::new(open(&osm)?)).with_context(|| format!("{}", osm.display()))?;
            let net = build_network(&data, &table).with_context(|| format!("{}", osm.display()))?;
            write_text(&out, &net.to_json_string())
        }
        Command::SampleOd { network, count, seed, out, od_whitelist } => {
            let net = RoadNetwork::load_json(&network)?;
            let pairs = match od_whitelist {
                Some(p) => {
                    #[derive(Deserialize)]
                    struct Row {
                        origin: NodeId,
                        destination: NodeId,
                    }
                    let rows: Vec<Row> = read_csv(&p)?;
                    let list: Vec<_> = rows.iter().map(|r| (r.origin, r.destination)).collect();
                    sample_from_whitelist(&net, &list, count, seed).with_context(|| format!("{}", p.display()))?
                }
                None => sample_od_pairs(&net, count, seed).with_context(|| format!("{}", network.display()))?,
            };
            write_csv(&out, &pairs)
        }
        Command::Route { network, od, out } => {
            let net = RoadNetwork::load_json(&network)?;
            let pairs: Vec<OdPair> = read_csv(&od)?;
            let mut records = Vec::with_capacity(pairs.len());
            for (pair, route) in pairs.iter().zip(route_all(&net, &pairs)) {
                let route = route.with_context(|| format!("{}: pair {}", od.display(), pair.pair_id))?;
                records.push(RouteRecord::new(pair.pair_id, route));
            }
            write_jsonl(&out, &records)
        }
        Command::Features { network, routes, out } => {
            let net = RoadNetwork::load_json(&network)?;
            let records: Vec<RouteRecord> = read_jsonl(&routes)?;
            let rows = features_for_routes(&net, records, &routes)?;
            write_csv(&out, &rows)
        }
        Command::SynthNet { rows, cols, seed, out, speeds, control_probs } => {
            let probs = match control_probs {
                Some(p) => read_json::<ControlProbs>(&p)?,
                None => ControlProbs::default(),
            };
            let speeds = speeds.unwrap_or_else(|| DEFAULT_SPEEDS_KPH.to_vec());
            let net = grid_network(rows, cols, seed, &probs, &speeds)?;
            write_text(&out, &net.to_json_string())
        }
        Command::SynthRef { features, seed, out, delay_model } => {
            let model = match delay_model {
                Some(p) => {
                    let m: DelayModel = read_json(&p)?;
                    m.validate().with_context(|| format!("{}", p.display()))?;
                    m
                }
                None => DelayModel::default(),
            };
            let rows: Vec<FeatureRecord> = read_csv(&features)?;
            let refs: Vec<ReferenceRecord> = rows
                .iter()
                .map(|r| ReferenceRecord {
                    pair_id: r.pair_id,
                    actual_s: synthetic_truth(&r.features(), &model, seed, r.pair_id),
                })
                .collect();
            write_csv(&out, &refs)
        }
        Command::Split { features, test_fraction, seed, train_out, test_out } => {
            let rows: Vec<FeatureRecord> = read_csv(&features)?;
            let (train, test) =
                train_test_split(rows.len(), test_fraction, seed).with_context(|| format!("{}", features.display()))?;
            write_csv(&train_out, &train.iter().map(|&i| rows[i]).collect::<Vec<_>>())?;
            write_csv(&test_out, &test.iter().map(|&i| rows[i]).collect::<Vec<_>>())
        }
        Command::Train { features, reference, out, forest } => {
            let (x, y) = training_data(&features, &reference)?;
            let model = fit_forest(&x, &y, &forest.params()).context("training failed")?;
            write_text(&out, &model.to_json())
        }
        Command::Tune { features, reference, budget, folds, seed, space, out } => {
            let (x, y) = training_data(&features, &reference)?;
            let space = match space {
                Some(p) => read_json::<SearchSpace>(&p)?,
                None => SearchSpace::default(),
            };
            let result = random_search(&x, &y, &space, budget, folds, seed).context("search failed")?;
            write_text(&out, &serde_json::to_string_pretty(&result)?)
        }
        Command::Predict { model, features, out } => {
            let forest = RegressionForest::load(&model)?;
            let rows: Vec<FeatureRecord> = read_csv(&features)?;
            let x = feature_matrix(&rows);
            let pred = predict_forest(&forest, &x).with_context(|| format!("{}", model.display()))?;
            let out_rows: Vec<PredictionRecord> =
                rows.iter().zip(pred).map(|(r, p)| PredictionRecord { pair_id: r.pair_id, predicted_s: p }).collect();
            write_csv(&out, &out_rows)
        }
        Command::Evaluate { pred, reference, naive_pred, naive_features, model_id, dataset_id, timestamp, out } => {
            let refs = reference_map(&reference)?;
            let preds: Vec<PredictionRecord> = read_csv(&pred)?;
            let model = evaluate_joined(&preds, &refs, &pred, &reference)?;
            let baseline = match (naive_pred, naive_features) {
                (Some(p), _) => {
                    let rows: Vec<PredictionRecord> = read_csv(&p)?;
                    Some(evaluate_joined(&rows, &refs, &p, &reference)?)
                }
                (None, Some(p)) => {
                    let rows: Vec<FeatureRecord> = read_csv(&p)?;
                    let as_pred: Vec<PredictionRecord> = rows
                        .iter()
                        .map(|r| PredictionRecord { pair_id: r.pair_id, predicted_s: r.naive_tt_s })
                        .collect();
                    Some(evaluate_joined(&as_pred, &refs, &p, &reference)?)
                }
                (None, None) => None,
            };
            let report = Report {
                model_id,
                dataset_id,
                timestamp: timestamp.unwrap_or_else(|| chrono::Utc::now().to_rfc3339()),
                improvement: baseline.as_ref().map(|b| Improvement::between(b, &model)),
                metrics: model,
                baseline,
            };
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => write_text(&p, &text),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
        Command::Cv { features, reference, folds, forest, out } => {
            let (x, y) = training_data(&features, &reference)?;
            let params = forest.params();
            let maes = kfold_cv(&x, &y, &params, folds, params.seed).context("cross-validation failed")?;
            let rows: Vec<FoldRecord> =
                maes.iter().enumerate().map(|(fold, &mae_s)| FoldRecord { fold, mae_s }).collect();
            emit_csv(out.as_deref(), &rows)
        }
        Command::Importance { model, out } => {
            let forest = RegressionForest::load(&model)?;
            let imp = mdi_importance(&forest);
            if imp.no_splits {
                eprintln!("warning: {}: no tree contains a split; importances are all zero", model.display());
            }
            let rows: Vec<ImportanceRecord> = forest
                .feature_names
                .iter()
                .zip(imp.weights)
                .map(|(feature, weight)| ImportanceRecord { feature: feature.clone(), weight })
                .collect();
            emit_csv(out.as_deref(), &rows)
        }
    }
}

/// One row of a reference CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub pair_id: u64,
    pub actual_s: f64,
}

/// One row of a prediction CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub pair_id: u64,
    pub predicted_s: f64,
}

#[derive(Debug, Serialize)]
struct FoldRecord {
    fold: usize,
    mae_s: f64,
}

#[derive(Debug, Serialize)]
struct ImportanceRecord {
    feature: String,
    weight: f64,
}

/// Evaluation report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model_id: String,
    pub dataset_id: String,
    pub timestamp: String,
    #[serde(flatten)]
    pub metrics: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub improvement: Option<Improvement>,
}

/// Model relative to the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    /// baseline MAE / model MAE.
    pub mae_factor: f64,
    /// baseline MSE / model MSE.
    pub mse_factor: f64,
    /// baseline MAPE - model MAPE, in percentage points.
    pub mape_reduction_pct: f64,
    /// model R² - baseline R².
    pub r2_gain: f64,
}

impl Improvement {
    fn between(baseline: &EvalReport, model: &EvalReport) -> Self {
        Self {
            mae_factor: baseline.mae_s / model.mae_s,
            mse_factor: baseline.mse_s2 / model.mse_s2,
            mape_reduction_pct: baseline.mape_pct - model.mape_pct,
            r2_gain: model.r2 - baseline.r2,
        }
    }
}

fn features_for_routes(net: &RoadNetwork, records: Vec<RouteRecord>, path: &Path) -> Result<Vec<FeatureRecord>> {
    use rayon::prelude::*;
    records
        .into_par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let pair_id = rec.pair_id;
            let ctx = || format!("{}: line {} (pair {pair_id})", path.display(), i + 1);
            let route = rec.into_route();
            route.validate(net).with_context(ctx)?;
            let fv = feature_vector(net, &route).with_context(ctx)?;
            Ok(FeatureRecord::new(pair_id, fv))
        })
        .collect()
}

pub fn feature_matrix(rows: &[FeatureRecord]) -> Matrix {
    let data: Vec<[f64; FEATURE_NAMES.len()]> = rows.iter().map(|r| r.features().to_row()).collect();
    Matrix::from_rows(&data).expect("feature rows have fixed width")
}

fn reference_map(path: &Path) -> Result<HashMap<u64, f64>> {
    let rows: Vec<ReferenceRecord> = read_csv(path)?;
    let mut map = HashMap::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if !(r.actual_s > 0.0 && r.actual_s.is_finite()) {
            bail!("{}: record {} (pair {}): actual_s must be positive", path.display(), i + 1, r.pair_id);
        }
        if map.insert(r.pair_id, r.actual_s).is_some() {
            bail!("{}: record {}: duplicate pair_id {}", path.display(), i + 1, r.pair_id);
        }
    }
    Ok(map)
}

/// Feature matrix and targets, joined on pair_id in feature-file order.
pub fn training_data(features: &Path, reference: &Path) -> Result<(Matrix, Vec<f64>)> {
    let refs = reference_map(reference)?;
    let rows: Vec<FeatureRecord> = read_csv(features)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if !seen.insert(r.pair_id) {
            bail!("{}: record {}: duplicate pair_id {}", features.display(), i + 1, r.pair_id);
        }
        let actual = refs.get(&r.pair_id).ok_or_else(|| {
            anyhow!(
                "{}: record {}: pair {} has no reference time in {}",
                features.display(),
                i + 1,
                r.pair_id,
                reference.display()
            )
        })?;
        y.push(*actual);
    }
    Ok((feature_matrix(&rows), y))
}

fn evaluate_joined(
    preds: &[PredictionRecord],
    refs: &HashMap<u64, f64>,
    pred_path: &Path,
    ref_path: &Path,
) -> Result<EvalReport> {
    let mut p = Vec::with_capacity(preds.len());
    let mut a = Vec::with_capacity(preds.len());
    for (i, r) in preds.iter().enumerate() {
        let actual = refs.get(&r.pair_id).ok_or_else(|| {
            anyhow!(
                "{}: record {}: pair {} has no reference time in {}",
                pred_path.display(),
                i + 1,
                r.pair_id,
                ref_path.display()
            )
        })?;
        p.push(r.predicted_s);
        a.push(*actual);
    }
    evaluate(&p, &a).with_context(|| format!("{}", pred_path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("{}: cannot open", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("{}: cannot create", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .with_context(|| format!("{}: write failed", path.display()))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(open(path)?));
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{}: record {}", path.display(), i + 1)))
        .collect()
}

fn write_csv_to<W: Write, T: Serialize>(w: W, rows: &[T]) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv_to(create(path)?, rows).with_context(|| format!("{}: write failed", path.display()))
}

fn emit_csv<T: Serialize>(path: Option<&Path>, rows: &[T]) -> Result<()> {
    match path {
        Some(p) => write_csv(p, rows),
        None => write_csv_to(std::io::stdout().lock(), rows).context("stdout"),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(BufReader::new(open(path)?)).with_context(|| format!("{}: malformed JSON", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.with_context(|| format!("{}: line {}", path.display(), i + 1))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("{}: write failed", path.display()))
}
