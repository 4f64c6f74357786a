use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use garnet_core::graph::{load_edge_list, write_edge_list};
use serde_json::{json, Value};

fn garnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_garnet"))
        .args(args)
        .env_remove("GARNET_THREADS")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Writes a small SBM dataset into `dir/data` and returns that directory.
fn dataset(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let cfg = dir.join("gen.json");
    fs::write(&cfg, json!({"seed": 1, "sbm": {"n": 120, "blocks": 2}}).to_string()).unwrap();
    let out = garnet(&["gen-sbm", "--config", path_str(&cfg), "--out", path_str(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, value.to_string()).unwrap();
    path
}

fn purify_config(dir: &Path, data: &Path) -> PathBuf {
    write_config(
        dir,
        "purify.json",
        json!({
            "graph": data.join("graph.edgelist"),
            "labels": data.join("labels.txt"),
            "seed": 5,
            "k": 10,
            "gamma_percentile": 90.0,
            "dump_scores": true,
        }),
    )
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn oversized_k_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = purify_config(dir.path(), &data);
    let out = garnet(&["purify", "--config", path_str(&cfg), "--k", "500", "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("k = 500"));
}

#[test]
fn missing_labels_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = write_config(
        dir.path(),
        "attack.json",
        json!({"graph": data.join("graph.edgelist"), "labels": dir.path().join("absent.txt"), "seed": 1}),
    );
    let out = garnet(&["attack", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn missing_graph_file_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "p.json", json!({"graph": dir.path().join("nope"), "seed": 1, "r": 2, "gamma": 1.0}));
    assert_eq!(garnet(&["purify", "--config", path_str(&cfg)]).status.code(), Some(5));
}

#[test]
fn purify_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = purify_config(dir.path(), &data);
    let out = dir.path().join("o");
    let files = ["purified.edgelist", "purify_report.json", "edge_scores.csv"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let res = garnet(&["purify", "--config", path_str(&cfg), "--out", path_str(&out)]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        runs.push(files.map(|f| fs::read(out.join(f)).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    let report = read_json(&out.join("purify_report.json"));
    assert_eq!(report["n"], 120);
    assert_eq!(report["config"]["r"], 20, "auto r is 10 per class");
    assert!(report["gamma_resolved"].as_f64().unwrap() > 0.0);
    let timings = read_json(&out.join("purify_timings.json"));
    assert!(timings["total"].as_f64().unwrap() > 0.0);
}

#[test]
fn zero_budget_attack_rewrites_the_input_canonically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    // A messy but equivalent copy of the graph: comments, reversed pairs.
    let g = load_edge_list(data.join("graph.edgelist"), None).unwrap();
    let mut messy = String::from("# shuffled copy\n");
    for (i, j, w) in g.edges().collect::<Vec<_>>().into_iter().rev() {
        messy.push_str(&format!("{j} {i} {w}\n"));
    }
    let messy_path = dir.path().join("messy.edgelist");
    fs::write(&messy_path, messy).unwrap();
    let canonical = dir.path().join("canonical.edgelist");
    write_edge_list(&load_edge_list(&messy_path, Some(g.n())).unwrap(), &canonical).unwrap();

    let cfg = write_config(
        dir.path(),
        "attack.json",
        json!({
            "graph": messy_path,
            "labels": data.join("labels.txt"),
            "seed": 2,
            "attack": {"kind": "dice_global", "ptb_ratio": 0.0},
        }),
    );
    let out = dir.path().join("o");
    let res = garnet(&["attack", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read(out.join("attacked.edgelist")).unwrap(), fs::read(&canonical).unwrap());
}

#[test]
fn attack_report_shows_homophily_drop() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = write_config(
        dir.path(),
        "attack.json",
        json!({
            "graph": data.join("graph.edgelist"),
            "labels": data.join("labels.txt"),
            "seed": 2,
            "attack": {"kind": "dice_global", "ptb_ratio": 0.2},
        }),
    );
    let out = dir.path().join("o");
    assert!(garnet(&["attack", "--config", path_str(&cfg), "--out", path_str(&out)]).status.success());
    let report = read_json(&out.join("attack_report.json"));
    assert!(report["homophily_attacked"].as_f64().unwrap() < report["homophily_clean"].as_f64().unwrap());
    let moves = fs::read_to_string(out.join("moves.csv")).unwrap();
    assert_eq!(moves.lines().count() as u64, 1 + report["moves"].as_u64().unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = purify_config(dir.path(), &data);
    let out = dir.path().join("o");
    let res = garnet(&[
        "purify", "--config", path_str(&cfg), "--out", path_str(&out),
        "--r", "6", "--k", "7", "--gamma", "0.5", "--mode", "full", "--sigma-sq", "inf", "--seed", "9",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let c = &read_json(&out.join("purify_report.json"))["config"];
    assert_eq!(c["r"], 6);
    assert_eq!(c["k"], 7);
    assert_eq!(c["gamma"], 0.5);
    assert_eq!(c["gamma_percentile"], Value::Null);
    assert_eq!(c["mode"], "full");
    assert_eq!(c["sigma_sq"], "inf");
    assert_eq!(c["seed"], 9);
}

#[test]
fn eval_with_single_repeat_and_guarded_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = write_config(
        dir.path(),
        "eval.json",
        json!({
            "graph": data.join("graph.edgelist"),
            "labels": data.join("labels.txt"),
            "features": data.join("features.csv"),
            "splits": data.join("splits.json"),
            "seed": 3,
            "r": 10,
            "k": 10,
            "gamma_percentile": 90.0,
            "repeats": 1,
            "baseline": true,
            "dense_limit": 50,
            "attack": {"kind": "dice_global", "ptb_ratio": 0.2},
            "gcn": {"epochs": 30},
        }),
    );
    let out = dir.path().join("o");
    let res = garnet(&["eval", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report = read_json(&out.join("eval_report.json"));
    for variant in ["clean", "attacked", "purified"] {
        assert_eq!(report[variant]["std"], 0.0, "{variant}");
        assert_eq!(report[variant]["accuracies"].as_array().unwrap().len(), 1);
    }
    assert!(report["tsvd"]["error"].as_str().unwrap().contains("dense"));
    assert_eq!(report["probes"].as_array().unwrap().len(), 5);
}

#[test]
fn bench_with_one_size_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bench.json",
        json!({"seed": 1, "r": 8, "k": 10, "gamma_percentile": 90.0, "bench": {"sizes": [2000], "blocks": 8}}),
    );
    let out = dir.path().join("o");
    let res = garnet(&["bench", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("2000,"));
}

#[test]
fn missing_seed_and_bad_thread_count_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let cfg = write_config(dir.path(), "p.json", json!({"graph": data.join("graph.edgelist"), "r": 4, "gamma": 1.0}));
    assert_eq!(garnet(&["purify", "--config", path_str(&cfg)]).status.code(), Some(5));
    let out = Command::new(env!("CARGO_BIN_EXE_garnet"))
        .args(["gen-sbm", "--seed", "1", "--out", path_str(&dir.path().join("o"))])
        .env("GARNET_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
}
