use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn hmh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmh"))
        .args(args)
        .env_remove("HMH_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_json(path: &Path, v: &Value) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small hub-and-spoke dataset written by `hmh gen` into `dir/data`.
fn toy_data(dir: &Path) -> PathBuf {
    let gen_cfg = write_json(&dir.join("gen.json"), &json!({"a": 4, "b": 4, "m": 40}));
    let data = dir.join("data");
    let out = hmh(&["gen", "hubspoke", "--out", s(&data), "--config", s(&gen_cfg), "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn train_config(dir: &Path, model: &str, lr: f64, outdir: &str) -> PathBuf {
    write_json(
        &dir.join(format!("{outdir}.json")),
        &json!({
            "format_version": 1,
            "task": "node",
            "model": model,
            "data": {"dir": "data"},
            "hmh": {"hidden": 8, "encoder_dims": [8]},
            "baseline": {"hidden": 8},
            "train": {"lr": lr, "epochs": 12, "patience": 12, "refresh_every": 4, "seed": 3},
            "outdir": outdir,
        }),
    )
}

#[test]
fn train_writes_outputs_and_eval_reads_them() {
    let tmp = TempDir::new().unwrap();
    toy_data(tmp.path());
    for model in ["hmh", "gcn", "smp", "cheb"] {
        let cfg = train_config(tmp.path(), model, 0.01, model);
        let out = hmh(&["train", s(&cfg)]);
        assert_eq!(code(&out), 0, "{model}: {}", stderr(&out));
        let run = tmp.path().join(model);
        for f in ["checkpoint.json", "history.csv", "metrics.json", "meta.json"] {
            assert!(run.join(f).is_file(), "{model}: missing {f}");
        }
        let metrics = read_json(&run.join("metrics.json"));
        assert_eq!(metrics["model"], model);
        let test = metrics["scores"]["test"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&test));
        let history = fs::read_to_string(run.join("history.csv")).unwrap();
        assert_eq!(history.lines().count(), 1 + metrics["epochs_run"].as_u64().unwrap() as usize);

        let scores = run.join("scores.json");
        let ev = hmh(&["eval", s(&cfg), "--checkpoint", s(&run.join("checkpoint.json")), "--out", s(&scores)]);
        assert_eq!(code(&ev), 0, "{model}: {}", stderr(&ev));
        assert_eq!(read_json(&scores), metrics["scores"], "{model}: eval disagrees with training");
    }
}

#[test]
fn missing_feature_file_is_reported_by_path() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path());
    let cfg = write_json(
        &tmp.path().join("cfg.json"),
        &json!({
            "format_version": 1,
            "task": "node",
            "model": "gcn",
            "data": {"files": {
                "edges": data.join("edges.tsv"),
                "features": "nowhere/features.csv",
                "labels": data.join("labels.csv"),
                "splits": data.join("splits.json"),
            }},
            "outdir": "out",
        }),
    );
    let out = hmh(&["train", s(&cfg)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nowhere/features.csv"), "{}", stderr(&out));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn invalid_configs_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    toy_data(tmp.path());
    let base = read_json(&train_config(tmp.path(), "gcn", 0.01, "out"));
    let mut unknown = base.clone();
    unknown["train"]["learning_rate"] = json!(0.1);
    let mut version = base.clone();
    version["format_version"] = json!(7);
    let mut mismatch = base.clone();
    mismatch["data"] = json!({"tree": {}});
    for (name, v) in [("unknown", unknown), ("version", version), ("mismatch", mismatch)] {
        let cfg = write_json(&tmp.path().join(format!("{name}.json")), &v);
        let out = hmh(&["train", s(&cfg)]);
        assert_eq!(code(&out), 1, "{name}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error:"), "{name}");
    }
    assert_eq!(code(&hmh(&["frobnicate"])), 1);
    assert_eq!(code(&hmh(&["gen", "lattice", "--out", s(tmp.path())])), 1);
}

#[test]
fn divergence_exits_with_two_and_keeps_history() {
    let tmp = TempDir::new().unwrap();
    toy_data(tmp.path());
    for model in ["hmh", "gcn", "smp", "cheb"] {
        let outdir = format!("blown_{model}");
        let path = train_config(tmp.path(), model, 1e6, &outdir);
        // Adam moves each weight by about lr per step, so the blow-up takes
        // a few dozen epochs to overflow
        let mut v = read_json(&path);
        v["train"]["epochs"] = json!(200);
        v["train"]["patience"] = json!(200);
        let cfg = write_json(&path, &v);
        let out = hmh(&["train", s(&cfg)]);
        assert_eq!(code(&out), 2, "{model}: {}", stderr(&out));
        assert!(stderr(&out).contains("history.csv"));
        let run = tmp.path().join(&outdir);
        assert!(!run.join("checkpoint.json").exists());
        let metrics = read_json(&run.join("metrics.json"));
        assert!(metrics["diverged"].is_string());
        let rows = fs::read_to_string(run.join("history.csv")).unwrap().lines().count() - 1;
        assert!(rows > 0);
        assert_eq!(rows, metrics["epochs_run"].as_u64().unwrap() as usize);
    }
}

#[test]
fn seed_env_changes_the_run() {
    let tmp = TempDir::new().unwrap();
    toy_data(tmp.path());
    let cfg = train_config(tmp.path(), "gcn", 0.01, "seeded");
    let history = |seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_hmh"));
        cmd.args(["train", s(&cfg)]).env_remove("HMH_SEED");
        if let Some(v) = seed {
            cmd.env("HMH_SEED", v);
        }
        let out = cmd.output().unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        fs::read_to_string(tmp.path().join("seeded/history.csv")).unwrap()
    };
    let plain = history(None);
    assert_eq!(history(Some("3")), plain);
    assert_ne!(history(Some("4")), plain);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    toy_data(tmp.path());
    let mut bodies = Vec::new();
    for outdir in ["first", "second"] {
        let cfg = train_config(tmp.path(), "hmh", 0.01, outdir);
        assert_eq!(code(&hmh(&["train", s(&cfg)])), 0);
        let run = tmp.path().join(outdir);
        bodies.push(
            ["checkpoint.json", "history.csv", "metrics.json"]
                .map(|f| fs::read(run.join(f)).unwrap())
                .to_vec(),
        );
    }
    assert_eq!(bodies[0], bodies[1]);

    let bench = |out: &Path| {
        let o = hmh(&["bench", "locality", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        fs::read(out.join("locality.csv")).unwrap()
    };
    assert_eq!(bench(&tmp.path().join("b1")), bench(&tmp.path().join("b2")));
}

#[test]
fn bench_locality_rows_are_distributions() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bench");
    let o = hmh(&["bench", "locality", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("locality.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..3], &["level", "column", "kind"]);
    assert_eq!(*header.last().unwrap(), "beyond");
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), header.len());
        let total: f64 = fields[3..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() <= 1e-9, "{line}");
        rows += 1;
    }
    assert!(rows > 0);
    let summary = read_json(&out.join("locality_summary.json"));
    assert!(summary["passed"].is_boolean());
    assert!(stderr(&o).contains("locality: PASS"));
}

#[test]
fn bench_rejects_unknown_suite() {
    let tmp = TempDir::new().unwrap();
    let o = hmh(&["bench", "everything", "--out", s(tmp.path())]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown suite"));
}

#[test]
fn bench_scaling_writes_one_row_per_size() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_json(
        &tmp.path().join("scaling.json"),
        &json!({"edges": [2000, 8000], "nodes": 200, "repeats": 1}),
    );
    let out = tmp.path().join("bench");
    let o = hmh(&["bench", "scaling", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("scaling.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "target_edges,edges,nodes,median_ms,ms_per_medge");
    assert_eq!(lines.len(), 3);
    let summary = read_json(&out.join("scaling_summary.json"));
    assert!(summary["ms_per_medge_spread"].as_f64().unwrap() >= 1.0);
}

/// Path graph on four nodes with two feature columns.
fn four_node_dir(dir: &Path) -> PathBuf {
    let data = dir.join("four");
    fs::create_dir_all(&data).unwrap();
    fs::write(data.join("edges.tsv"), "0\t1\n1\t2\n2\t3\n").unwrap();
    fs::write(data.join("features.csv"), "1,0\n0.9,0.1\n0.1,0.9\n0,1\n").unwrap();
    fs::write(data.join("labels.csv"), "node_id,label\n0,0\n1,0\n2,1\n3,1\n").unwrap();
    fs::write(data.join("splits.json"), r#"{"train": [0, 3], "val": [1], "test": [2]}"#).unwrap();
    data
}

fn inspect_config(dir: &Path, data: &str, ratio: f64, h_t: usize) -> PathBuf {
    write_json(
        &dir.join(format!("inspect_{data}.json")),
        &json!({
            "format_version": 1,
            "task": "node",
            "model": "hmh",
            "data": {"dir": data},
            "hmh": {"hidden": 4, "encoder_dims": [4],
                    "hierarchy": {"ratio": ratio, "h_t": h_t, "affinity": "neg_sq_distance"}},
            "outdir": "unused",
        }),
    )
}

#[test]
fn basis_inspect_dumps_small_levels() {
    let tmp = TempDir::new().unwrap();
    four_node_dir(tmp.path());
    let cfg = inspect_config(tmp.path(), "four", 0.5, 1);
    let out = tmp.path().join("inspect");
    let o = hmh(&["basis", "inspect", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&out.join("basis.json"));
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels[0]["n"], 4);
    for lv in levels {
        let n = lv["n"].as_u64().unwrap() as usize;
        assert!(lv["gram_residual"].as_f64().unwrap() <= 1e-10);
        let dense = lv["dense"].as_array().expect("small levels are dumped");
        assert_eq!(dense.len(), n);
        // independent check of orthonormality from the dump itself
        let u: Vec<Vec<f64>> = dense
            .iter()
            .map(|r| r.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
            .collect();
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| u[i][a] * u[i][b]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() <= 1e-10);
            }
        }
        let kinds = lv["scaling"].as_u64().unwrap() + lv["inter"].as_u64().unwrap() + lv["intra"].as_u64().unwrap();
        assert_eq!(kinds as usize, n);
    }
    let last = levels.last().unwrap();
    assert_eq!((last["n"].as_u64(), last["scaling"].as_u64()), (Some(1), Some(1)));
    let hop = fs::read_to_string(out.join("hop_energy.csv")).unwrap();
    assert!(hop.starts_with("level,column,hop,fraction\n"));
}

#[test]
fn basis_inspect_skips_dense_dump_for_large_graphs() {
    let tmp = TempDir::new().unwrap();
    let gen_cfg = write_json(&tmp.path().join("sbm.json"), &json!({"sizes": [500, 500], "p_in": 0.01, "p_out": 0.002}));
    let data = tmp.path().join("big");
    assert_eq!(code(&hmh(&["gen", "sbm", "--out", s(&data), "--config", s(&gen_cfg)])), 0);
    let cfg = inspect_config(tmp.path(), "big", 0.1, 10);
    let o = hmh(&["basis", "inspect", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let levels = report["levels"].as_array().unwrap();
    assert_eq!(levels[0]["n"], 1000);
    assert!(levels[0]["dense"].is_null());
    assert!(levels[0]["gram_residual"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn basis_inspect_load_failure_exits_with_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = inspect_config(tmp.path(), "absent", 0.5, 2);
    let o = hmh(&["basis", "inspect", s(&cfg)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("absent"));
}

#[test]
fn generated_datasets_round_trip_through_train() {
    let tmp = TempDir::new().unwrap();
    let tree_cfg = write_json(&tmp.path().join("tree.json"), &json!({"depth": 2, "samples": 40}));
    let trees = tmp.path().join("trees");
    assert_eq!(code(&hmh(&["gen", "tree", "--out", s(&trees), "--config", s(&tree_cfg)])), 0);
    assert!(trees.join("graphs.csv").is_file());
    let cfg = write_json(
        &tmp.path().join("graph.json"),
        &json!({
            "format_version": 1,
            "task": "graph",
            "model": "hmh",
            "data": {"dir": "trees"},
            "hmh": {"hidden": 8, "encoder_dims": [8], "hierarchy": {"coarsen_to_one": true}},
            "train": {"epochs": 3, "patience": 3, "batch_size": 8},
            "outdir": "graph_run",
        }),
    );
    let o = hmh(&["train", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics = read_json(&tmp.path().join("graph_run/metrics.json"));
    assert_eq!(metrics["task"], "graph");

    // writing the same generator twice gives identical files
    let again = tmp.path().join("trees2");
    assert_eq!(code(&hmh(&["gen", "tree", "--out", s(&again), "--config", s(&tree_cfg)])), 0);
    assert_eq!(fs::read(trees.join("graphs.csv")).unwrap(), fs::read(again.join("graphs.csv")).unwrap());
    assert_eq!(
        fs::read(trees.join("graphs/7/features.csv")).unwrap(),
        fs::read(again.join("graphs/7/features.csv")).unwrap()
    );
}
