use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn tte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tte")).args(args).output().expect("spawn tte")
}

fn ok(args: &[&str]) {
    let out = tte(args);
    assert!(
        out.status.success(),
        "tte {args:?} exited {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

struct Dir(TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn p(&self, name: &str) -> String {
        self.0.path().join(name).to_string_lossy().into_owned()
    }
}

#[test]
fn end_to_end_chain_on_fixture() {
    let d = Dir::new();
    let osm = fixture("sample.osm");
    ok(&["build", "--osm", osm.to_str().unwrap(), "--out", &d.p("net.json")]);
    ok(&["sample-od", "--network", &d.p("net.json"), "--count", "300", "--seed", "5", "--out", &d.p("od.csv")]);
    ok(&["route", "--network", &d.p("net.json"), "--od", &d.p("od.csv"), "--out", &d.p("routes.jsonl")]);
    ok(&["features", "--network", &d.p("net.json"), "--routes", &d.p("routes.jsonl"), "--out", &d.p("features.csv")]);
    ok(&["synth-ref", "--features", &d.p("features.csv"), "--seed", "6", "--out", &d.p("ref.csv")]);
    ok(&[
        "split",
        "--features",
        &d.p("features.csv"),
        "--seed",
        "2",
        "--train-out",
        &d.p("train.csv"),
        "--test-out",
        &d.p("test.csv"),
    ]);
    ok(&[
        "train",
        "--features",
        &d.p("train.csv"),
        "--ref",
        &d.p("ref.csv"),
        "--out",
        &d.p("model.json"),
        "--trees",
        "30",
        "--seed",
        "4",
    ]);
    ok(&["predict", "--model", &d.p("model.json"), "--features", &d.p("test.csv"), "--out", &d.p("pred.csv")]);
    ok(&[
        "evaluate",
        "--pred",
        &d.p("pred.csv"),
        "--ref",
        &d.p("ref.csv"),
        "--naive-features",
        &d.p("test.csv"),
        "--timestamp",
        "2024-01-01T00:00:00Z",
        "--out",
        &d.p("report.json"),
    ]);
    ok(&["importance", "--model", &d.p("model.json"), "--out", &d.p("importance.csv")]);

    let net: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.p("net.json")).unwrap()).unwrap();
    let nodes = net["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 25, "footway-only node removed");
    assert!(nodes.iter().any(|n| n["control"] != "none"));
    let od = fs::read_to_string(d.p("od.csv")).unwrap();
    assert!(od.starts_with("pair_id,origin,destination\n"));
    assert_eq!(od.lines().count(), 301);
    assert!(!od.contains('\r'));
    let features = fs::read_to_string(d.p("features.csv")).unwrap();
    assert!(features.lines().next().unwrap().starts_with("pair_id,naive_tt_s,n_signal"));
    let pred = fs::read_to_string(d.p("pred.csv")).unwrap();
    assert_eq!(pred.lines().count(), 61);

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.p("report.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 60);
    assert_eq!(report["timestamp"], "2024-01-01T00:00:00Z");
    assert!(report["mae_s"].as_f64().unwrap() < report["baseline"]["mae_s"].as_f64().unwrap());
    let imp = fs::read_to_string(d.p("importance.csv")).unwrap();
    assert!(imp.starts_with("feature,weight\n"));
    assert_eq!(imp.lines().count(), 12);

    ok(&[
        "cv",
        "--features",
        &d.p("train.csv"),
        "--ref",
        &d.p("ref.csv"),
        "--folds",
        "3",
        "--trees",
        "10",
        "--out",
        &d.p("cv.csv"),
    ]);
    assert_eq!(fs::read_to_string(d.p("cv.csv")).unwrap().lines().count(), 4);
}

#[test]
fn evaluate_hand_example() {
    let d = Dir::new();
    fs::write(d.p("p.csv"), "pair_id,predicted_s\n0,110\n1,180\n").unwrap();
    fs::write(d.p("r.csv"), "pair_id,actual_s\n1,200\n0,100\n").unwrap();
    let out = tte(&["evaluate", "--pred", &d.p("p.csv"), "--ref", &d.p("r.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((report["mape_pct"].as_f64().unwrap() - 10.0).abs() < 1e-9);
    assert!((report["mae_s"].as_f64().unwrap() - 15.0).abs() < 1e-9);
    assert!((report["r2"].as_f64().unwrap() - 0.9).abs() < 1e-9);
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = tte(&["route", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn data_errors_exit_1_with_file_context() {
    let d = Dir::new();
    fs::write(d.p("p.csv"), "pair_id,predicted_s\n0,110\n").unwrap();
    fs::write(d.p("r.csv"), "pair_id,actual_s\n0,0\n").unwrap();
    let out = tte(&["evaluate", "--pred", &d.p("p.csv"), "--ref", &d.p("r.csv")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = tte(&["build", "--osm", &d.p("missing.osm"), "--out", &d.p("net.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.osm"));
}

#[test]
fn synthetic_pipeline_is_byte_identical_when_repeated() {
    let d = Dir::new();
    let run = |tag: &str| {
        let f = |name: &str| d.p(&format!("{tag}_{name}"));
        ok(&["synth-net", "--rows", "6", "--cols", "7", "--seed", "7", "--out", &f("net.json")]);
        ok(&["sample-od", "--network", &f("net.json"), "--count", "150", "--seed", "1", "--out", &f("od.csv")]);
        ok(&["route", "--network", &f("net.json"), "--od", &f("od.csv"), "--out", &f("routes.jsonl")]);
        ok(&["features", "--network", &f("net.json"), "--routes", &f("routes.jsonl"), "--out", &f("features.csv")]);
        ok(&["synth-ref", "--features", &f("features.csv"), "--seed", "3", "--out", &f("ref.csv")]);
        ok(&[
            "--threads",
            if tag == "a" { "1" } else { "4" },
            "train",
            "--features",
            &f("features.csv"),
            "--ref",
            &f("ref.csv"),
            "--out",
            &f("model.json"),
            "--trees",
            "25",
            "--seed",
            "9",
        ]);
        ok(&["predict", "--model", &f("model.json"), "--features", &f("features.csv"), "--out", &f("pred.csv")]);
    };
    run("a");
    run("b");
    for name in ["net.json", "od.csv", "routes.jsonl", "features.csv", "ref.csv", "model.json", "pred.csv"] {
        let a = fs::read(d.p(&format!("a_{name}"))).unwrap();
        let b = fs::read(d.p(&format!("b_{name}"))).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
}

#[test]
fn whitelist_sampling() {
    let d = Dir::new();
    ok(&["synth-net", "--rows", "3", "--cols", "3", "--seed", "1", "--out", &d.p("net.json")]);
    fs::write(d.p("wl.csv"), "origin,destination\n0,8\n2,6\n").unwrap();
    ok(&[
        "sample-od",
        "--network",
        &d.p("net.json"),
        "--count",
        "20",
        "--seed",
        "4",
        "--od-whitelist",
        &d.p("wl.csv"),
        "--out",
        &d.p("od.csv"),
    ]);
    let od = fs::read_to_string(d.p("od.csv")).unwrap();
    for line in od.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(matches!((cols[1], cols[2]), ("0", "8") | ("2", "6")), "{line}");
    }
}
