//! Acceptance criteria. Each test prints one `[PASS]`/`[FAIL]` line; run with
//! `cargo test -p tte-core --test acceptance -- --nocapture` to see them.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use tte_core::eval::{evaluate, kfold_cv, paired_t_test_p, train_test_split, EvalReport};
use tte_core::features::{classify_turn, feature_vector, FeatureVector, TurnClass};
use tte_core::forest::{
    fit_forest, fit_tree, mdi_importance, predict_forest, predict_tree, root_split, ForestParams, Matrix,
};
use tte_core::netmodel::{largest_scc, ControlKind, EdgeId, GeoPoint, NodeId, RoadEdge, RoadNetwork, RoadNode};
use tte_core::rng::rng_from_seed;
use tte_core::routing::{route_all, sample_od_pairs, shortest_path};
use tte_core::synth::{grid_network, synthetic_truth, ControlProbs, DelayModel, DEFAULT_SPEEDS_KPH};

fn report(id: &str, ok: bool, detail: String) {
    println!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id} failed: {detail}");
}

fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn c01_routing_matches_simple_path_enumeration() {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut queries = 0usize;
    for seed in 0..600u64 {
        let mut r = common::rng(seed);
        let integer = seed % 2 == 0;
        let (ids, arcs) = common::random_strongly_connected(&mut r, 8, 16, integer);
        let net = common::network_from_arcs(&ids, &arcs);
        for &o in &ids {
            for &d in &ids {
                if o == d {
                    continue;
                }
                queries += 1;
                let route = shortest_path(&net, o, d).expect("strongly connected");
                let paths = common::all_simple_paths(&arcs, o, d);
                let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let ok = if integer {
                    // exact cost, and the tie-break picks fewest edges then
                    // the lexicographically smallest edge-id sequence
                    let expected =
                        paths.iter().filter(|p| p.0 == best).map(|p| (p.1.len(), p.1.clone())).min().unwrap().1;
                    route.naive_tt_s == best && route.edge_seq == expected
                } else {
                    close_rel(route.naive_tt_s, best, 1e-9)
                };
                if !ok {
                    mismatches.push((seed, o, d, route.naive_tt_s, best));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        "C1 routing oracle",
        mismatches.is_empty() && elapsed < Duration::from_secs(10),
        format!("600 graphs, {queries} queries, {} mismatches, {elapsed:.2?} (< 10 s)", mismatches.len()),
    );
}

fn random_digraph(r: &mut impl Rng) -> (Vec<NodeId>, Vec<(EdgeId, NodeId, NodeId)>) {
    let n = r.random_range(1..=10);
    let mut ids: Vec<NodeId> = (0..n as NodeId).map(|i| 100 - 7 * i).collect();
    ids.sort_unstable_by_key(|_| r.random::<u32>());
    let m = r.random_range(0..=2 * n);
    let arcs = (0..m)
        .filter_map(|e| {
            let a = ids[r.random_range(0..n)];
            let b = ids[r.random_range(0..n)];
            (a != b).then_some((e as EdgeId, a, b))
        })
        .collect();
    (ids, arcs)
}

#[test]
fn c02_scc_matches_reachability_oracle() {
    let start = Instant::now();
    let mut failures = 0;
    let trials = 300;
    for seed in 0..trials {
        let mut r = common::rng(10_000 + seed);
        let (ids, arcs) = random_digraph(&mut r);
        let nodes = ids
            .iter()
            .map(|&id| RoadNode { id, point: GeoPoint::new(0.0, 0.0).unwrap(), control: ControlKind::None })
            .collect();
        let edges = arcs.iter().map(|&(e, a, b)| RoadEdge::new(e, a, b, 10.0, 30.0).unwrap()).collect();
        let net = RoadNetwork::new(nodes, edges).unwrap();
        let out = largest_scc(&net).unwrap();
        let got_nodes: Vec<NodeId> = out.nodes().iter().map(|n| n.id).collect();
        let got_edges: Vec<EdgeId> = out.edges().iter().map(|e| e.id()).collect();
        let (want_nodes, want_edges) = common::brute_force_largest_scc(&ids, &arcs);
        let idempotent = largest_scc(&out).unwrap() == out;
        if got_nodes != want_nodes || got_edges != want_edges || !idempotent {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        "C2 SCC oracle",
        failures == 0 && elapsed < Duration::from_secs(5),
        format!("{trials} digraphs, {failures} mismatches, {elapsed:.2?} (< 5 s)"),
    );
}

#[test]
fn c03_root_split_matches_exhaustive_search() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let trials = 400;
    for seed in 0..trials {
        let mut r = common::rng(20_000 + seed);
        let n_rows = r.random_range(1..=6);
        let n_features = r.random_range(1..=2);
        let rows: Vec<Vec<f64>> =
            (0..n_rows).map(|_| (0..n_features).map(|_| r.random_range(0..4) as f64).collect()).collect();
        let y: Vec<f64> = (0..n_rows).map(|_| r.random_range(0..10) as f64).collect();
        let got = root_split(&Matrix::from_rows(&rows).unwrap(), &y, 2).unwrap();
        let want = common::exhaustive_root_split(&rows, &y);
        if got != want {
            failures.push((seed, got, want));
        }
    }
    let elapsed = start.elapsed();
    report(
        "C3 split oracle",
        failures.is_empty() && elapsed < Duration::from_secs(5),
        format!("{trials} datasets (<= 6 rows, <= 2 features), mismatches {failures:?}, {elapsed:.2?} (< 5 s)"),
    );
}

#[test]
fn c04_metrics_exactness() {
    let r = evaluate(&[110.0, 180.0], &[100.0, 200.0]).unwrap();
    let metrics_ok = (r.mape_pct - 10.0).abs() <= 1e-9
        && (r.mae_s - 15.0).abs() <= 1e-9
        && (r.mse_s2 - 250.0).abs() <= 1e-9
        && (r.delta_s + 5.0).abs() <= 1e-9
        && (r.apr - 1.0).abs() <= 1e-9
        && (r.r2 - 0.9).abs() <= 1e-9;

    let p = paired_t_test_p(&[1.0, 2.0, 3.0]).unwrap();
    let t = 2.0 / (1.0f64 / 3.0).sqrt();
    let oracle = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 2.0).unwrap().cdf(t));
    let p_ok = (p - 0.0742).abs() <= 0.0005 && (p - oracle).abs() <= 0.0005;
    report(
        "C4 metrics exactness",
        metrics_ok && p_ok,
        format!(
            "MAPE {} MAE {} MSE {} delta {} APR {} R2 {}; p {p:.6} vs independent {oracle:.6}",
            r.mape_pct, r.mae_s, r.mse_s2, r.delta_s, r.apr, r.r2
        ),
    );
}

#[test]
fn c05_turn_classifier_table() {
    let table = [
        (0.0, TurnClass::Straight),
        (45.0, TurnClass::SlightRight),
        (-45.0, TurnClass::SlightLeft),
        (100.0, TurnClass::Right),
        (-100.0, TurnClass::Left),
        (170.0, TurnClass::UTurn),
        (-44.999, TurnClass::Straight),
    ];
    let wrong: Vec<_> = table.iter().filter(|(d, c)| classify_turn(*d) != *c).collect();
    report("C5 turn classifier", wrong.is_empty(), format!("{} boundary cases, wrong: {wrong:?}", table.len()));
}

/// The synthetic experiment shared by criteria 6 to 9.
struct Experiment {
    x_train: Matrix,
    y_train: Vec<f64>,
    x_test: Matrix,
    y_test: Vec<f64>,
    params: ForestParams,
    model_json: String,
    test_pred: Vec<f64>,
    naive: EvalReport,
    forest: EvalReport,
    importance: Vec<f64>,
    elapsed: Duration,
}

const GRID_SEED: u64 = 7;
const OD_SEED: u64 = 7;
const TRUTH_SEED: u64 = 7;
const SPLIT_SEED: u64 = 7;
const FOREST_SEED: u64 = 7;

fn run_experiment() -> Experiment {
    let start = Instant::now();
    let net = grid_network(20, 20, GRID_SEED, &ControlProbs::default(), &DEFAULT_SPEEDS_KPH).unwrap();
    let pairs = sample_od_pairs(&net, 3000, OD_SEED).unwrap();
    let delays = DelayModel::default();
    assert_eq!(delays.noise_sigma_s, 10.0);
    let mut features: Vec<FeatureVector> = Vec::with_capacity(pairs.len());
    let mut truth = Vec::with_capacity(pairs.len());
    for (pair, route) in pairs.iter().zip(route_all(&net, &pairs)) {
        let fv = feature_vector(&net, &route.unwrap()).unwrap();
        truth.push(synthetic_truth(&fv, &delays, TRUTH_SEED, pair.pair_id));
        features.push(fv);
    }
    let rows: Vec<[f64; 11]> = features.iter().map(|f| f.to_row()).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let (train, test) = train_test_split(pairs.len(), 0.2, SPLIT_SEED).unwrap();
    let pick = |idx: &[usize]| idx.iter().map(|&i| truth[i]).collect::<Vec<_>>();
    let (x_train, y_train) = (x.select_rows(&train), pick(&train));
    let (x_test, y_test) = (x.select_rows(&test), pick(&test));

    let params = ForestParams { seed: FOREST_SEED, ..ForestParams::default() };
    let model = fit_forest(&x_train, &y_train, &params).unwrap();
    let test_pred = predict_forest(&model, &x_test).unwrap();
    let naive_pred: Vec<f64> = x_test.rows().map(|r| r[0]).collect();
    Experiment {
        naive: evaluate(&naive_pred, &y_test).unwrap(),
        forest: evaluate(&test_pred, &y_test).unwrap(),
        importance: mdi_importance(&model).weights,
        model_json: model.to_json(),
        x_train,
        y_train,
        x_test,
        y_test,
        params,
        test_pred,
        elapsed: start.elapsed(),
    }
}

fn experiment() -> &'static Experiment {
    static EXP: OnceLock<Experiment> = OnceLock::new();
    EXP.get_or_init(run_experiment)
}

#[test]
fn c06_synthetic_end_to_end() {
    let e = experiment();
    let (n, f) = (&e.naive, &e.forest);
    let naive_p = n.p_value.unwrap();
    let forest_p = f.p_value.unwrap();
    let checks = [
        ("MAE_forest <= 0.5 MAE_naive", f.mae_s <= 0.5 * n.mae_s),
        ("MAPE_forest < MAPE_naive - 5", f.mape_pct < n.mape_pct - 5.0),
        ("forest bias p > 0.05", forest_p > 0.05),
        ("naive bias p < 0.01", naive_p < 0.01),
        ("R2_forest >= R2_naive + 0.05", f.r2 >= n.r2 + 0.05),
        ("runtime < 3 min", e.elapsed < Duration::from_secs(180)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    report(
        "C6 synthetic end-to-end",
        failed.is_empty(),
        format!(
            "test n={}: naive MAE {:.2} MAPE {:.2}% delta {:.2} (p {:.2e}) APR {:.3} R2 {:.3} | \
             forest MAE {:.2} MAPE {:.2}% delta {:.2} (p {:.3}) APR {:.3} R2 {:.3} | {:.2?}; failed: {failed:?}",
            f.n,
            n.mae_s,
            n.mape_pct,
            n.delta_s,
            naive_p,
            n.apr,
            n.r2,
            f.mae_s,
            f.mape_pct,
            f.delta_s,
            forest_p,
            f.apr,
            f.r2,
            e.elapsed
        ),
    );
}

#[test]
fn c07_cv_stability() {
    let e = experiment();
    let maes = kfold_cv(&e.x_train, &e.y_train, &e.params, 5, SPLIT_SEED).unwrap();
    let mean = maes.iter().sum::<f64>() / maes.len() as f64;
    let sd = (maes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (maes.len() - 1) as f64).sqrt();
    let spread = maes.iter().cloned().fold(f64::MIN, f64::max) - maes.iter().cloned().fold(f64::MAX, f64::min);
    report(
        "C7 CV stability",
        sd / mean < 0.10 && spread < 0.20 * mean,
        format!(
            "fold MAEs {maes:.2?}; RSD {:.2}% (< 10%), spread {:.2}% of mean (< 20%)",
            100.0 * sd / mean,
            100.0 * spread / mean
        ),
    );
}

#[test]
fn c08_naive_time_dominates_importance() {
    let w = &experiment().importance;
    let naive = w[0];
    let strict_max = w[1..].iter().all(|&v| v < naive);
    report(
        "C8 feature importance",
        strict_max && naive >= 0.40,
        format!("naive_tt_s weight {naive:.3} (>= 0.40, strict max); all {w:.3?}"),
    );
}

#[test]
fn c09_determinism() {
    let first = experiment();
    let again = run_experiment();
    let fmt = |e: &Experiment, y: &[f64]| -> String {
        e.test_pred.iter().zip(y).enumerate().map(|(i, (p, _))| format!("{i},{p}\n")).collect()
    };
    let same_model = first.model_json == again.model_json;
    let same_pred = fmt(first, &first.y_test) == fmt(&again, &again.y_test);
    let same_data = first.x_test == again.x_test && first.y_test == again.y_test;
    report(
        "C9 determinism",
        same_model && same_pred && same_data,
        format!(
            "model bytes identical: {same_model}, prediction bytes identical: {same_pred} ({} bytes of model)",
            first.model_json.len()
        ),
    );
}

#[test]
fn c10_degenerate_forests() {
    let mut r = common::rng(42);
    let rows: Vec<Vec<f64>> =
        (0..200).map(|_| (0..11).map(|_| r.random_range(0.0..50.0f64).round()).collect()).collect();
    let y: Vec<f64> = rows.iter().map(|row| 3.0 * row[0] + 10.0 * row[1] + r.random_range(-5.0..5.0)).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let probe: Vec<Vec<f64>> = (0..50).map(|_| (0..11).map(|_| r.random_range(-10.0..60.0)).collect()).collect();
    let probe = Matrix::from_rows(&probe).unwrap();

    let single = ForestParams { n_trees: 1, bootstrap: false, seed: 3, ..ForestParams::default() };
    let forest = fit_forest(&x, &y, &single).unwrap();
    let tree = fit_tree(&x, &y, &single, &mut rng_from_seed(99)).unwrap();
    let cart_same = predict_forest(&forest, &probe)
        .unwrap()
        .iter()
        .zip(probe.rows())
        .all(|(p, row)| *p == predict_tree(&tree, row));

    let stump = ForestParams { n_trees: 25, max_depth: 0, bootstrap: false, seed: 3, ..ForestParams::default() };
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let max_dev = predict_forest(&fit_forest(&x, &y, &stump).unwrap(), &probe)
        .unwrap()
        .iter()
        .map(|p| (p - mean).abs())
        .fold(0.0, f64::max);
    report(
        "C10 degenerate forests",
        cart_same && max_dev <= 1e-12,
        format!("single-tree forest equals CART: {cart_same}; depth-0 max |pred - mean| = {max_dev:.2e} (<= 1e-12)"),
    );
}
