//! Runs the `rocore` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rocore::metrics::{ari, b_cubed, v_measure};
use serde_json::Value;

fn rocore(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rocore"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = rocore(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap())
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| {
        panic!(
            "stderr is not JSON: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

const SMALL_CONFIG: &str = r#"{
    "learning_rate": 1e-2,
    "batch_size": 16,
    "pretrain_epochs": 3,
    "max_outer_epochs": 20,
    "min_outer_epochs": 20,
    "hidden_dims": [16],
    "bottleneck_dim": 8
}"#;

/// A small dataset and training config in a fresh directory.
fn workspace(noise: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "gen-data",
            "--out",
            "data",
            "--seed",
            "1",
            "--num-predefined",
            "3",
            "--num-novel",
            "2",
            "--instances-per-class",
            "20",
            "--embedding-dim",
            "6",
            "--noise",
            noise,
        ],
        dir.path(),
    );
    std::fs::write(dir.path().join("cfg.json"), SMALL_CONFIG).unwrap();
    dir
}

#[test]
fn gen_data_is_deterministic_and_listed_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(
            &[
                "gen-data",
                "--out",
                out,
                "--seed",
                "3",
                "--instances-per-class",
                "5",
            ],
            dir.path(),
        );
    }
    for f in ["labeled.jsonl", "unlabeled.jsonl", "dataset.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = json(dir.path().join("a/manifest.json"));
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    assert_eq!(files, ["labeled.jsonl", "unlabeled.jsonl", "dataset.json"]);
    assert_eq!(manifest["seeds"], serde_json::json!([3]));
}

#[test]
fn same_seed_twice_gives_identical_outputs() {
    let ws = workspace("1");
    for out in ["r1", "r2"] {
        ok(
            &[
                "train", "--data", "data", "--config", "cfg.json", "--seed", "7", "--out", out,
            ],
            ws.path(),
        );
    }
    for f in ["report.json", "model.ckpt"] {
        assert_eq!(
            std::fs::read(ws.path().join("r1").join(f)).unwrap(),
            std::fs::read(ws.path().join("r2").join(f)).unwrap(),
            "{f}"
        );
    }
    let report = json(ws.path().join("r1/report.json"));
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["checkpoint"], "model.ckpt");
    assert!(report.get("wall_clock_secs").is_none());

    let manifest = json(ws.path().join("r1/manifest.json"));
    for f in manifest["files"].as_array().unwrap() {
        let bytes = std::fs::read(ws.path().join("r1").join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
}

#[test]
fn ablation_flag_reaches_the_loss_breakdown() {
    let ws = workspace("1");
    ok(
        &[
            "train",
            "--data",
            "data",
            "--config",
            "cfg.json",
            "--ablate",
            "no-reconstruction",
            "--out",
            "r",
        ],
        ws.path(),
    );
    let report = json(ws.path().join("r/report.json"));
    assert_eq!(report["config"]["ablation"]["no_reconstruction"], true);
    let epochs = report["epochs"].as_array().unwrap();
    assert!(!epochs.is_empty());
    for e in epochs {
        assert_eq!(e["reconstruction"].as_f64().unwrap(), 0.0);
        assert!(e["center"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn seed_range_aggregates_mean_and_deviation() {
    let ws = workspace("1");
    ok(
        &[
            "train", "--data", "data", "--config", "cfg.json", "--seeds", "1..3", "--out", "multi",
        ],
        ws.path(),
    );
    let aggregate = json(ws.path().join("multi/aggregate.json"));
    assert_eq!(aggregate["seeds"], serde_json::json!([1, 2, 3]));
    let f1 = &aggregate["metrics"]["novel_b3_f1"];
    assert_eq!(f1["runs"], 3);
    let values: Vec<f64> = (1..=3)
        .map(|s| {
            json(ws.path().join(format!("multi/seed-{s}/report.json")))["novel_test"]["b3"]["f1"]
                .as_f64()
                .unwrap()
        })
        .collect();
    let mean = values.iter().sum::<f64>() / 3.0;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((f1["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((f1["std"].as_f64().unwrap() - std).abs() < 1e-12);
    assert_eq!(f1["display"], format!("{mean:.3} ± {std:.3}"));
}

#[test]
fn zero_noise_checkpoint_scores_perfectly_on_its_training_labels() {
    let ws = workspace("0");
    let cfg = SMALL_CONFIG.replace(
        "\"bottleneck_dim\": 8",
        "\"bottleneck_dim\": 8, \"test_fraction\": 0.0",
    );
    std::fs::write(ws.path().join("cfg.json"), cfg).unwrap();
    ok(
        &[
            "train", "--data", "data", "--config", "cfg.json", "--out", "r",
        ],
        ws.path(),
    );
    ok(
        &[
            "eval",
            "--checkpoint",
            "r/model.ckpt",
            "--data",
            "data/unlabeled.jsonl",
            "--out",
            "eval/metrics.json",
            "--predictions",
            "eval/pred.jsonl",
        ],
        ws.path(),
    );
    let m = &json(ws.path().join("eval/metrics.json"))["metrics"];
    for v in [
        &m["b3"]["precision"],
        &m["b3"]["recall"],
        &m["b3"]["f1"],
        &m["v"]["f1"],
        &m["ari"],
    ] {
        assert_eq!(v.as_f64().unwrap(), 1.0, "{m}");
    }
}

#[test]
fn eval_metrics_match_recomputation_from_predictions() {
    let ws = workspace("3");
    ok(
        &[
            "train", "--data", "data", "--config", "cfg.json", "--out", "r",
        ],
        ws.path(),
    );
    ok(
        &[
            "eval",
            "--checkpoint",
            "r/model.ckpt",
            "--data",
            "data/unlabeled.jsonl",
            "--out",
            "metrics.json",
            "--predictions",
            "pred.jsonl",
        ],
        ws.path(),
    );
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for line in std::fs::read_to_string(ws.path().join("pred.jsonl"))
        .unwrap()
        .lines()
    {
        let row: Value = serde_json::from_str(line).unwrap();
        gold.push(row["gold"].as_u64().unwrap() as usize);
        pred.push(row["pred"].as_u64().unwrap() as usize);
    }
    let report = json(ws.path().join("metrics.json"));
    assert_eq!(report["instances"].as_u64().unwrap() as usize, gold.len());
    let m = &report["metrics"];
    assert_eq!(
        m["b3"]["f1"].as_f64().unwrap(),
        b_cubed(&pred, &gold).unwrap().f1
    );
    assert_eq!(
        m["v"]["f1"].as_f64().unwrap(),
        v_measure(&pred, &gold).unwrap().f1
    );
    assert_eq!(m["ari"].as_f64().unwrap(), ari(&pred, &gold).unwrap());
    let manifest = json(ws.path().join("metrics.json.manifest.json"));
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);

    ok(
        &[
            "eval",
            "--checkpoint",
            "r/model.ckpt",
            "--data",
            "data/labeled.jsonl",
            "--head",
            "labeled",
            "--out",
            "lab.json",
        ],
        ws.path(),
    );
    let acc = json(ws.path().join("lab.json"))["accuracy"]
        .as_f64()
        .unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn eval_rejects_missing_checkpoint_and_wrong_dimensions() {
    let ws = workspace("1");
    let out = rocore(
        &[
            "eval",
            "--checkpoint",
            "missing.ckpt",
            "--data",
            "data/unlabeled.jsonl",
            "--out",
            "m.json",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "validation");
    assert!(err["message"].as_str().unwrap().contains("missing.ckpt"));

    ok(
        &[
            "train", "--data", "data", "--config", "cfg.json", "--out", "r",
        ],
        ws.path(),
    );
    ok(
        &[
            "gen-data",
            "--out",
            "wide",
            "--instances-per-class",
            "2",
            "--embedding-dim",
            "5",
        ],
        ws.path(),
    );
    let out = rocore(
        &[
            "eval",
            "--checkpoint",
            "r/model.ckpt",
            "--data",
            "wide/unlabeled.jsonl",
            "--out",
            "m.json",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"]
        .as_str()
        .unwrap()
        .contains("dimension"));
}

type ProjectionRow = (String, f64, f64, String, usize);

fn read_projection(path: PathBuf) -> Vec<ProjectionRow> {
    let mut r = csv::Reader::from_path(path).unwrap();
    assert_eq!(
        r.headers().unwrap(),
        vec!["id", "x", "y", "gold_label", "pseudo_label"]
    );
    r.deserialize().map(|row| row.unwrap()).collect()
}

#[test]
fn projection_orders_components_and_repeats_duplicates() {
    let ws = workspace("1");
    ok(
        &[
            "train", "--data", "data", "--config", "cfg.json", "--out", "r",
        ],
        ws.path(),
    );
    ok(
        &[
            "project",
            "--checkpoint",
            "r/model.ckpt",
            "--data",
            "data/unlabeled.jsonl",
            "--out",
            "proj/points.csv",
        ],
        ws.path(),
    );
    let rows = read_projection(ws.path().join("proj/points.csv"));
    assert_eq!(rows.len(), 40);
    let var = |f: &dyn Fn(&ProjectionRow) -> f64| {
        let mean = rows.iter().map(f).sum::<f64>() / rows.len() as f64;
        rows.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>()
    };
    assert!(var(&|r| r.1) >= var(&|r| r.2));
    assert!(rows.iter().all(|r| r.4 < 2 && !r.3.is_empty()));
    assert!(ws.path().join("proj/points.csv.manifest.json").exists());

    let first = std::fs::read_to_string(ws.path().join("data/unlabeled.jsonl")).unwrap();
    let line = first.lines().next().unwrap();
    let dup = format!("{line}\n{line}\n{first}");
    std::fs::write(ws.path().join("dup.jsonl"), dup).unwrap();
    ok(
        &[
            "project",
            "--checkpoint",
            "r/model.ckpt",
            "--data",
            "dup.jsonl",
            "--out",
            "dup.csv",
        ],
        ws.path(),
    );
    let rows = read_projection(ws.path().join("dup.csv"));
    assert_eq!((rows[0].1, rows[0].2), (rows[1].1, rows[1].2));
    assert_eq!((rows[0].1, rows[0].2), (rows[2].1, rows[2].2));

    std::fs::write(ws.path().join("two.jsonl"), format!("{line}\n{line}\n")).unwrap();
    let out = rocore(
        &[
            "project",
            "--checkpoint",
            "r/model.ckpt",
            "--data",
            "two.jsonl",
            "--out",
            "two.csv",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn grad_check_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        &["grad-check", "--configs", "3", "--out", "gc.json"],
        dir.path(),
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("L_BCE"));
    let report = json(dir.path().join("gc.json"));
    assert_eq!(report["cases"].as_array().unwrap().len(), 18);
    assert!(report["max_relative_error"].as_f64().unwrap() < 1e-4);

    let out = rocore(&["grad-check", "--configs", "0"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergence_exits_two_and_keeps_last_good_checkpoint() {
    let ws = workspace("1");
    std::fs::write(
        ws.path().join("bad.json"),
        r#"{"learning_rate": 1e300, "pretrain_epochs": 0, "batch_size": 16, "hidden_dims": [16], "bottleneck_dim": 8}"#,
    )
    .unwrap();
    let out = rocore(
        &[
            "train", "--data", "data", "--config", "bad.json", "--out", "div",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "runtime");
    assert!(err["message"].as_str().unwrap().contains("non-finite"));
    let ckpt = err["last_good_checkpoint"].as_str().unwrap();
    let loaded = rocore::trainer::load_checkpoint(&ws.path().join(ckpt)).unwrap();
    assert_eq!(loaded.config.learning_rate, 1e300);
}

#[test]
fn invalid_usage_and_config_exit_one() {
    let ws = workspace("1");
    let out = rocore(&["train", "--data", "data", "--no-such-flag"], ws.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "validation");

    std::fs::write(ws.path().join("neg.json"), r#"{"sigma": -1.0}"#).unwrap();
    let out = rocore(
        &[
            "train", "--data", "data", "--config", "neg.json", "--out", "x",
        ],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"]
        .as_str()
        .unwrap()
        .contains("sigma"));

    let out = rocore(
        &["train", "--data", "data", "--seeds", "5..2", "--out", "x"],
        ws.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    let out = rocore(&["--help"], ws.path());
    assert_eq!(out.status.code(), Some(0));
}
