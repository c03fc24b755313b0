use std::path::Path;
use std::process::{Command, Output};

use dilate::forecast::Checkpoint;
use serde_json::Value;

fn dilate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dilate")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn metric_map(path: impl AsRef<Path>) -> Vec<(String, f64)> {
    read_json(path)
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["metric"].as_str().unwrap().to_string(), r["mean"].as_f64().unwrap()))
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_reproducible_and_indexed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for (dir, seed) in [(&a, "0"), (&b, "0"), (&c, "1")] {
        let out = dilate(&["gen", "--dataset", "synthetic-det", "--seed", seed, "--out", s(dir)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    for split in ["train", "valid", "test"] {
        let bin = format!("synthetic-det_{split}.bin");
        let bytes = std::fs::read(a.join(&bin)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(&bin)).unwrap());
        assert_ne!(bytes, std::fs::read(c.join(&bin)).unwrap());
        let side = read_json(a.join(format!("synthetic-det_{split}.json")));
        assert_eq!(side["shape"], serde_json::json!([500, 40]));
    }
    let manifest = read_json(a.join("manifest.json"));
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let bad_cfg = tmp.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"train": {"epochs": 3, "learn_rate": 0.1}}"#).unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["train", "--dataset", "synthetic-det", "--alpha", "2.0", "--out", s(&out)],
        vec!["train", "--dataset", "synthetic-det", "--gamma", "0", "--out", s(&out)],
        vec!["train", "--dataset", "no-such-dataset", "--out", s(&out)],
        vec!["train", "--out", s(&out)],
        vec!["train", "--dataset", "synthetic-det", "--loss", "hinge", "--out", s(&out)],
        vec!["train", "--dataset", "synthetic-det", "--seed", "x", "--out", s(&out)],
        vec!["train", "--config", s(&bad_cfg), "--dataset", "synthetic-det", "--out", s(&out)],
        vec!["eval", "--dataset", "synthetic-det", "--out", s(&out)],
        vec!["eval", "--dataset", "synthetic-det", "--checkpoint", "/missing/model.bin", "--out", s(&out)],
        vec!["eval", "--dataset", "synthetic-det", "--metrics", "smape", "--out", s(&out)],
        vec!["sweep", "--dataset", "synthetic-det", "--param", "alpha", "--grid", "", "--out", s(&out)],
        vec!["sweep", "--dataset", "synthetic-det", "--param", "beta", "--grid", "0.5", "--out", s(&out)],
        vec!["bench", "--repeats", "0", "--out", s(&out)],
    ];
    for args in cases {
        assert_eq!(code(&dilate(&args)), 2, "{args:?}");
    }
    let threads = Command::new(env!("CARGO_BIN_EXE_dilate"))
        .args(["bench", "--lengths", "4", "--repeats", "1", "--out", s(&out)])
        .env("THREADS", "none")
        .output()
        .unwrap();
    assert_eq!(code(&threads), 2);
}

#[test]
fn corrupt_checkpoint_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let path = Checkpoint::oracle().write(tmp.path(), "model").unwrap();
    std::fs::write(path.with_extension("json"), "{\"format\": 7}").unwrap();
    let out = dilate(&["eval", "--dataset", "synthetic-det", "--checkpoint", s(&path), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oracle_checkpoint_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = Checkpoint::oracle().write(tmp.path(), "oracle").unwrap();
    let out_dir = tmp.path().join("eval");
    let out = dilate(&[
        "eval",
        "--dataset",
        "synthetic-det",
        "--checkpoint",
        s(&path),
        "--metrics",
        "mse,dtw,tdi,ramp,hausdorff,crps,h_quality,h_diversity,f1",
        "--out",
        s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_json(out_dir.join("metrics.json"));
    for row in rows.as_array().unwrap() {
        let mut keys: Vec<_> = row.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["config_hash", "mean", "metric", "n_seeds", "std"]);
        let mean = row["mean"].as_f64().unwrap();
        if row["metric"].as_str().unwrap().starts_with("h_") || row["metric"] == "f1" {
            // DILATE of a series with itself is negative (soft minimum below zero cost)
            assert!(mean <= 0.0, "{row}");
        } else {
            assert!(mean.abs() < 1e-12, "{row}");
        }
    }
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,scale,mean,std,scaled_mean,scaled_std"));
}

#[test]
fn zero_epoch_training_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let train_dir = tmp.path().join("train");
    let out = dilate(&["train", "--dataset", "synthetic-det", "--epochs", "0", "--seed", "0..2", "--out", s(&train_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for seed in 0..2 {
        let side = read_json(train_dir.join(format!("model_seed{seed}.json")));
        assert_eq!(side["epoch"], 0);
        assert_eq!(side["seed"], seed);
        let log = std::fs::read_to_string(train_dir.join(format!("train_log_seed{seed}.jsonl"))).unwrap();
        assert!(log.is_empty());
    }
    let ckpts = format!("{},{}", s(&train_dir.join("model_seed0.bin")), s(&train_dir.join("model_seed1.bin")));
    let eval_dir = tmp.path().join("eval");
    let out = dilate(&["eval", "--dataset", "synthetic-det", "--checkpoint", &ckpts, "--out", s(&eval_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_json(eval_dir.join("metrics.json"));
    let names: Vec<_> = rows.as_array().unwrap().iter().map(|r| r["metric"].as_str().unwrap().to_string()).collect();
    assert_eq!(names, ["mse", "dtw", "tdi", "ramp", "hausdorff"]);
    assert!(rows.as_array().unwrap().iter().all(|r| r["n_seeds"] == 2));
    let hash = read_json(eval_dir.join("manifest.json"))["config_hash"].clone();
    assert!(rows.as_array().unwrap().iter().all(|r| r["config_hash"] == hash));
}

#[test]
fn cache_directory_and_csv_datasets_train() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&dilate(&["gen", "--dataset", "synthetic-det", "--out", s(&data)])), 0);
    let out = dilate(&["train", "--dataset", s(&data), "--epochs", "1", "--out", s(&tmp.path().join("t1"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let csv = tmp.path().join("series.csv");
    let text: String = (0..400).map(|t| format!("{}\n", (t as f64 * 0.2).sin())).collect();
    std::fs::write(&csv, format!("value\n{text}")).unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"csv": {"context": 12, "horizon": 6, "stride": 2}}"#).unwrap();
    let out = dilate(&["train", "--config", s(&cfg), "--dataset", s(&csv), "--epochs", "1", "--out", s(&tmp.path().join("t2"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn alpha_one_sweep_row_matches_soft_dtw() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("sweep");
    let out = dilate(&[
        "sweep", "--dataset", "synthetic-det", "--param", "alpha", "--grid", "1.0,0.5", "--epochs", "1", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_json(out_dir.join("sweep.json"));
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let get = |row: &Value, name: &str| {
        row["metrics"].as_array().unwrap().iter().find(|m| m["metric"] == name).unwrap()["mean"].as_f64().unwrap()
    };
    assert_eq!(rows[0]["value"], 1.0);
    let (d, sd) = (get(&rows[0], "dilate"), get(&rows[0], "soft_dtw"));
    assert!((d - sd).abs() <= 1e-12 * sd.abs().max(1.0), "{d} vs {sd}");
    assert!(std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap().lines().count() > 1);
}

#[test]
fn bench_writes_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("bench");
    let out = dilate(&["bench", "--lengths", "4,8", "--repeats", "1", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_json(out_dir.join("bench.json"));
    assert_eq!(rows.as_array().unwrap().len(), 2);
    assert!(rows[0]["max_gradient_gap"].as_f64().unwrap() < 1e-4);
    let manifest = read_json(out_dir.join("manifest.json"));
    assert_eq!(manifest["files"], serde_json::json!(["bench.csv", "bench.json"]));
}

#[test]
fn stripe_train_and_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"stripe": {"hidden": 6, "latent": 2, "n_shape": 2, "n_time": 2, "epochs": 1, "proposal_epochs": 1}}"#,
    )
    .unwrap();
    let train_dir = tmp.path().join("st");
    let out = dilate(&["stripe-train", "--config", s(&cfg), "--dataset", "synthetic-prob", "--out", s(&train_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = train_dir.join("stripe_seed0.bin");
    assert!(ckpt.is_file());

    let eval_dir = tmp.path().join("se");
    let out = dilate(&["stripe-eval", "--dataset", "synthetic-prob", "--checkpoint", s(&ckpt), "--out", s(&eval_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = metric_map(eval_dir.join("metrics.json")).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"h_diversity@prior".to_string()));
    assert!(names.contains(&"f1@stripe".to_string()));
    let scatter = std::fs::read_to_string(eval_dir.join("scatter.csv")).unwrap();
    // 5 inputs × 2 sources × 4 trajectories
    assert_eq!(scatter.lines().count(), 1 + 5 * 2 * 4);

    let out = dilate(&["eval", "--dataset", "synthetic-prob", "--checkpoint", s(&ckpt), "--metrics", "mse", "--out", s(&eval_dir)]);
    assert_eq!(code(&out), 2);
}
