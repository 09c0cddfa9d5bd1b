use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: [&str; 5] = ["--n-x", "40", "--n-y", "16", "-q"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_suplearn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

/// gen-data into `dir/data`, with extra flags.
fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["gen-data", "--out", p(&data)];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args);
    data
}

fn fit(dir: &Path, samples: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let model = dir.join(name);
    let mut args = vec!["fit", "--samples", p(samples), "--out", p(&model), "-q"];
    args.extend(extra);
    ok(&args);
    model
}

#[test]
fn gen_data_writes_all_artifacts_deterministically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let da = gen(a.path(), &["--seed", "3"]);
    let db = gen(b.path(), &["--seed", "3"]);
    for f in ["ensemble.csv", "cloud.csv", "samples.csv"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
    let (header, rows) = read_csv(&da.join("samples.csv"));
    assert_eq!(header, ["y1", "y2", "y3", "h"]);
    assert_eq!(rows.len(), 16);
    let (_, cloud) = read_csv(&da.join("cloud.csv"));
    assert_eq!((cloud.len(), cloud[0].len()), (40, 3));

    let reach: Value = serde_json::from_str(&fs::read_to_string(da.join("reach_cloud.json")).unwrap()).unwrap();
    assert_eq!(reach["schema_version"], 1);
    assert_eq!(reach["provenance"]["seed"], 3);
}

#[test]
fn bicycle_projection_gives_planar_samples() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &["--preset", "bicycle-paper"]);
    let (header, _) = read_csv(&data.join("samples.csv"));
    assert_eq!(header, ["y1", "y2", "h"]);
}

#[test]
fn minimal_pipeline() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--n-x", "1", "--n-y", "1", "--out", p(&data), "-q"]);
    let model = fit(dir.path(), &data.join("samples.csv"), "m.json", &[]);
    let out = ok(&["hausdorff", p(&model), p(&model), "-q"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.0");
}

#[test]
fn qp_model_reproduces_its_anchor_values() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &[]);
    let model = fit(dir.path(), &data.join("samples.json"), "m.json", &[]);
    let eval = dir.path().join("anchors.csv");
    ok(&["eval", p(&model), "--directions", p(&data.join("samples.csv")), "--out", p(&eval), "-q"]);

    let json: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(json["kind"], "max_affine");
    let values: Vec<f64> = serde_json::from_value(json["values"].clone()).unwrap();
    let (_, rows) = read_csv(&eval);
    assert_eq!(rows.len(), values.len());
    for (row, h) in rows.iter().zip(&values) {
        assert!((row[3] - h).abs() <= 1e-9, "{} vs {h}", row[3]);
    }
    // Feasible fit: the anchors' values are close to the data.
    let (_, samples) = read_csv(&data.join("samples.csv"));
    for (row, h) in samples.iter().zip(&values) {
        assert!((row[3] - h).abs() < 1e-2);
    }
}

#[test]
fn eval_grid_and_determinism() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &[]);
    let model = fit(dir.path(), &data.join("samples.csv"), "m.json", &[]);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["eval", p(&model), "--grid", "sphere:100x50", "--out", p(&a), "-q"]);
    ok(&["eval", p(&model), "--grid", "sphere:100x50", "--out", p(&b), "-q"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(read_csv(&a).1.len(), 5000);

    let d = dir.path().join("default.csv");
    ok(&["eval", p(&model), "--out", p(&d), "-q"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&d).unwrap());
}

#[test]
fn isnn_fit_records_loss_history() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &[]);
    let model = fit(dir.path(), &data.join("samples.csv"), "isnn.json", &["--method", "isnn", "--epochs", "40"]);
    let json: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(json["kind"], "isnn");
    assert_eq!(json["training"]["loss_history"].as_array().unwrap().len(), 40);
    assert!(json["training"]["seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn contour_exports_cover_their_charts() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &["--preset", "bicycle-paper"]);
    let model = fit(dir.path(), &data.join("samples.csv"), "m.json", &[]);
    let out = dir.path().join("c.csv");
    ok(&["export-contour", p(&model), "--grid", "circle:720", "--out", p(&out), "-q"]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["theta", "h"]);
    assert_eq!(rows.len(), 720);
    assert!(rows.iter().all(|r| r[0] > -PI && r[0] <= PI && r[1].is_finite()));

    let data3 = gen(&dir.path().join("d3"), &[]);
    let model3 = fit(dir.path(), &data3.join("samples.csv"), "m3.json", &[]);
    ok(&["export-contour", p(&model3), "--out", p(&out), "-q"]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["phi", "theta", "h"]);
    assert_eq!(rows.len(), 5000);
    assert!(rows.iter().all(|r| r[0] > -PI && r[0] <= PI && r[1].abs() <= PI / 2.0));
}

#[test]
fn hausdorff_of_a_model_with_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), &[]);
    let model = fit(dir.path(), &data.join("samples.csv"), "m.json", &[]);
    let json = dir.path().join("h.json");
    let out = ok(&["hausdorff", p(&model), p(&model), "--out", p(&json), "-q"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.0");
    let v: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["delta_h"], 0.0);
}

#[test]
fn timing_table_layout() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("timing.csv");
    let mut args = vec!["fit", "--instances", "2", "--methods", "qp,isnn", "--epochs", "5", "--out", p(&out)];
    args.extend(SMALL);
    ok(&args);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "instance,method,seconds");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("1,qp,") && lines[2].starts_with("1,isnn,") && lines[4].starts_with("2,isnn,"));
}

#[test]
fn sweep_emits_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sweep.csv");
    ok(&[
        "hausdorff", "--sweep", "--n-x", "20", "--n-y", "12", "--epochs", "5", "--sweep-taus", "0.5,1",
        "--grid", "circle:90", "--out", p(&out), "-q",
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tau,method,delta_h");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("0.5,cloud,") && lines[2].starts_with("0.5,isnn,"));
}

#[test]
fn config_file_overrides_and_line_numbers() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "{\n  \"n_x\": 10,\n  \"n_y\": 5,\n  \"agent\": {\"x0\": [0, 0, 0], \"lower\": [\"-10deg\"], \"upper\": [\"20deg\"]}\n}\n").unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--config", p(&cfg), "--out", p(&data), "-q"]);
    assert_eq!(read_csv(&data.join("samples.csv")).1.len(), 5);
    let saved: Value = serde_json::from_str(&fs::read_to_string(data.join("config.json")).unwrap()).unwrap();
    assert!((saved["agent"]["upper"][0].as_f64().unwrap() - 20f64.to_radians()).abs() < 1e-15);

    fs::write(&cfg, "{\n  \"n_x\": 10,\n  \"bogus\": 1\n}\n").unwrap();
    let out = run(&["gen-data", "--config", p(&cfg), "--out", p(&data)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["fit", "--n-x", "0"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["eval", p(&dir.path().join("missing.json"))]).status.code(), Some(1));

    let future = dir.path().join("future.json");
    fs::write(&future, r#"{"schema_version": 99, "kind": "max_affine"}"#).unwrap();
    let out = run(&["eval", p(&future)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));

    let data = gen(dir.path(), &[]);
    let diverge = run(&[
        "fit", "--samples", p(&data.join("samples.csv")), "--method", "isnn", "--learning-rate", "1e300",
        "--out", p(&dir.path().join("x.json")), "-q",
    ]);
    assert_eq!(diverge.status.code(), Some(2), "{}", String::from_utf8_lossy(&diverge.stderr));

    let planar = gen(&dir.path().join("b"), &["--preset", "bicycle-paper"]);
    let m2 = fit(dir.path(), &planar.join("samples.csv"), "m2.json", &[]);
    let m3 = fit(dir.path(), &data.join("samples.csv"), "m3.json", &[]);
    assert_eq!(run(&["hausdorff", p(&m2), p(&m3)]).status.code(), Some(1));
}
