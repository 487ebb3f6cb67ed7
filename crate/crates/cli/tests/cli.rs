mod common;

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use urbanwind::evalharness::EvalReport;
use urbanwind::interface::dataset::{DatasetManifest, MANIFEST_FILE};
use urbanwind::interface::field::read_field;
use urbanwind::interface::sha256_hex;
use urbanwind::interface::wire::{PredictRequest, PredictResponse};
use urbanwind::raster::{Component, Direction};
use urbanwind_cli::commands::model_file;

use common::{random_bundle, random_layout, rng};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_urbanwind"));
    c.env("UF_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Parses the JSON error line a failing command prints last on stderr.
fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dir_hash(dir: &Path) -> String {
    let mut entries: Vec<_> = walk(dir);
    entries.sort();
    let mut acc = Vec::new();
    for f in entries {
        acc.extend_from_slice(f.strip_prefix(dir).unwrap().to_str().unwrap().as_bytes());
        acc.extend_from_slice(&std::fs::read(&f).unwrap());
    }
    sha256_hex(&acc)
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

/// City, tiles and 16x16 oracle fields for eight layouts.
fn small_dataset(root: &Path) -> std::path::PathBuf {
    let city = root.join("city.json");
    let ds = root.join("ds");
    ok(&["synth-city", "--buildings", "600", "--seed", "3", "--out", p(&city)]);
    ok(&["sample", "--city", p(&city), "--n", "8", "--seed", "1", "--out", p(&ds)]);
    ok(&[
        "simulate",
        "--dataset",
        p(&ds),
        "--resolution",
        "16",
        "--train-layouts",
        "4",
        "--validation-layouts",
        "2",
        "--test-layouts",
        "2",
    ]);
    ds
}

#[test]
fn usage_errors_print_a_json_line() {
    let out = run(&["bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"]["kind"], "usage");

    let out = run(&["predict", "--direction", "NE"]);
    assert_eq!(error_of(&out)["error"]["kind"], "usage");
}

#[test]
fn missing_input_is_an_io_error() {
    let out = run(&["ingest", "--city", "/nonexistent/city.json", "--out", "/tmp/never"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["kind"], "io");
}

#[test]
fn ingest_rejects_invalid_buildings() {
    let dir = tempfile::tempdir().unwrap();
    let city = dir.path().join("bad.json");
    std::fs::write(
        &city,
        r#"{"format": "urbanwind-city", "version": 1, "buildings": [{"vertices": [[0,0],[1,0],[0,1]], "height": -3}]}"#,
    )
    .unwrap();
    let out = run(&["ingest", "--city", p(&city), "--out", p(&dir.path().join("out"))]);
    assert_eq!(error_of(&out)["error"]["kind"], "validation");
}

#[test]
fn sampling_twice_gives_identical_directories() {
    let dir = tempfile::tempdir().unwrap();
    let city = dir.path().join("city.json");
    ok(&["synth-city", "--buildings", "400", "--seed", "9", "--out", p(&city)]);
    ok(&["ingest", "--city", p(&city), "--out", p(&dir.path().join("ingested"))]);
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["sample", "--city", p(&dir.path().join("ingested")), "--n", "5", "--seed", "4", "--out", p(&out)]);
    }
    assert_eq!(dir_hash(&dir.path().join("a")), dir_hash(&dir.path().join("b")));
}

#[test]
fn pipeline_train_evaluate_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let models = dir.path().join("models");
    for c in [Component::U, Component::V] {
        let out = model_file(&models, c, 0);
        ok(&[
            "train",
            "--dataset",
            p(&ds),
            "--component",
            &c.name().to_lowercase(),
            "--seed",
            "0",
            "--base-channels",
            "2",
            "--kernel",
            "3",
            "--max-epochs",
            "2",
            "--out",
            p(&out),
            "--history",
            p(&dir.path().join(format!("hist-{c}.json"))),
        ]);
    }
    let report = dir.path().join("eval.json");
    ok(&[
        "evaluate",
        "--dataset",
        p(&ds),
        "--predictor",
        "unet",
        "--models",
        p(&models),
        "--seeds",
        "0",
        "--out",
        p(&report),
    ]);
    let r: EvalReport = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r.replicates.len(), 1);
    assert_eq!(r.replicates[0].cases.len(), 8);
    assert!(r.u.mean.is_finite() && r.v.mean.is_finite());

    // two test layouts are too few for a rank correlation
    let out = run(&["correlate", "--dataset", p(&ds), "--report", p(&report), "--out", p(&dir.path().join("c.json"))]);
    assert_eq!(error_of(&out)["error"]["kind"], "validation");

    for name in ["zero", "mean"] {
        let out = dir.path().join(format!("{name}.json"));
        ok(&["evaluate", "--dataset", p(&ds), "--predictor", name, "--out", p(&out)]);
    }
    let out = run(&["evaluate", "--dataset", p(&ds), "--predictor", "knn", "--out", p(&dir.path().join("x.json"))]);
    assert_eq!(error_of(&out)["error"]["kind"], "unknown_strategy");

    ok(&["stats", "--dataset", p(&ds), "--out", p(&dir.path().join("stats.json"))]);
    let stats: Value = serde_json::from_slice(&std::fs::read(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["cases"], 16);
}

#[test]
fn evaluate_detects_a_mislabeled_field_hash() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(dir.path());
    let path = ds.join(MANIFEST_FILE);
    let mut manifest = DatasetManifest::from_bytes(&std::fs::read(&path).unwrap()).unwrap();
    let victim = manifest
        .cases
        .iter_mut()
        .find(|c| manifest.split.test.contains(&c.tile))
        .unwrap();
    victim.sha256 = "0".repeat(64);
    std::fs::write(&path, manifest.to_bytes()).unwrap();
    let out = run(&["evaluate", "--dataset", p(&ds), "--predictor", "zero", "--out", p(&dir.path().join("e.json"))]);
    assert_eq!(error_of(&out)["error"]["kind"], "integrity");
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[tokio::test]
async fn cli_predict_equals_served_predict() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("serve");
    random_bundle(Component::U, 31).save(&models.join("u.ufnm")).unwrap();
    random_bundle(Component::V, 32).save(&models.join("v.ufnm")).unwrap();

    let grid = random_layout(&mut rng(3));
    let req = PredictRequest::new(&grid, Direction::S);
    let layout = dir.path().join("layout.json");
    std::fs::write(&layout, serde_json::to_vec(&serde_json::json!({ "heights": req.heights, "cell_size": grid.cell_size })).unwrap()).unwrap();
    let field_out = dir.path().join("pred.ufnd");
    ok(&[
        "predict",
        "--model-u",
        p(&models.join("u.ufnm")),
        "--model-v",
        p(&models.join("v.ufnm")),
        "--layout",
        p(&layout),
        "--direction",
        "S",
        "--out",
        p(&field_out),
        "--json",
        p(&dir.path().join("pred.json")),
    ]);
    let cli_field = read_field(&field_out, grid.cell_size).unwrap();

    let port = free_port();
    let _server = Server(
        bin()
            .args(["serve", "--models", p(&models), "--port", &port.to_string()])
            .spawn()
            .unwrap(),
    );
    let client = reqwest::Client::new();
    let health = format!("http://127.0.0.1:{port}/health");
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        if let Ok(r) = client.get(&health).send().await {
            if r.status() == reqwest::StatusCode::OK {
                break;
            }
        }
        assert!(Instant::now() < deadline, "service did not come up");
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    let resp: PredictResponse = client
        .post(format!("http://127.0.0.1:{port}/predict"))
        .json(&req)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let served = resp.field(grid.cell_size).unwrap();
    let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&served.u), bits(&cli_field.u));
    assert_eq!(bits(&served.v), bits(&cli_field.v));

    let json: PredictResponse = serde_json::from_slice(&std::fs::read(dir.path().join("pred.json")).unwrap()).unwrap();
    assert_eq!(json.comfort_fraction, resp.comfort_fraction);
}

#[test]
fn comfort_writes_one_result_per_direction() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path();
    random_bundle(Component::U, 1).save(&models.join("u.ufnm")).unwrap();
    random_bundle(Component::V, 2).save(&models.join("v.ufnm")).unwrap();
    let layout = dir.path().join("layout.json");
    std::fs::write(
        &layout,
        r#"{"resolution": 64, "side": 1000.0, "rectangles": [{"x": 400, "y": 400, "width": 120, "depth": 60, "height": 40}]}"#,
    )
    .unwrap();
    let out = dir.path().join("comfort.json");
    ok(&[
        "comfort",
        "--model-u",
        p(&models.join("u.ufnm")),
        "--model-v",
        p(&models.join("v.ufnm")),
        "--layout",
        p(&layout),
        "--directions",
        "N,W",
        "--threshold",
        "1.0",
        "--out",
        p(&out),
    ]);
    let results: Vec<Value> = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(results[1]["direction"], "W");
    assert_eq!(results[0]["threshold"], 1.0);
}
