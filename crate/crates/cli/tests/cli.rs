use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bvi::{gmm1d_four, Mixture};
use serde_json::{json, Value};
use tempfile::TempDir;

fn bvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bvi")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_spec(dir: &Path, name: &str, spec: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

fn banana_spec(iterations: usize, curvature: f64) -> Value {
    json!({
        "target": {"kind": "banana", "curvature": curvature},
        "run": {"iterations": iterations, "init_cov_scale": 1.0, "record_timing": false},
        "output_dir": "out"
    })
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn single_iteration_run_returns_the_initial_gaussian() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), "spec.json", &banana_spec(1, 0.1));
    let out = bvi(&["run", spec.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let q: Mixture = serde_json::from_str(&read(&dir.path().join("out/mixture.json"))).unwrap();
    assert_eq!(q.len(), 1);
    let c = &q.components()[0];
    assert_eq!(c.mean().as_slice(), &[0.0, 0.0]);
    assert_eq!(c.cov().as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    for f in ["trace.json", "checkpoint.json"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
}

#[test]
fn repeated_runs_write_identical_traces() {
    let dir = TempDir::new().unwrap();
    let mut spec = banana_spec(6, 0.1);
    let a = write_spec(dir.path(), "a.json", &spec);
    spec["output_dir"] = json!("out2");
    let b = write_spec(dir.path(), "b.json", &spec);
    assert_eq!(code(&bvi(&["run", a.to_str().unwrap()])), 0);
    assert_eq!(code(&bvi(&["run", b.to_str().unwrap()])), 0);
    assert_eq!(read(&dir.path().join("out/trace.json")), read(&dir.path().join("out2/trace.json")));
    assert_eq!(read(&dir.path().join("out/mixture.json")), read(&dir.path().join("out2/mixture.json")));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let short = write_spec(dir.path(), "short.json", &banana_spec(4, 0.1));
    let mut long = banana_spec(7, 0.1);
    long["output_dir"] = json!("long");
    let long = write_spec(dir.path(), "long.json", &long);
    assert_eq!(code(&bvi(&["run", short.to_str().unwrap()])), 0);
    let out = bvi(&["resume", short.to_str().unwrap(), "--extra", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&bvi(&["run", long.to_str().unwrap()])), 0);
    assert_eq!(read(&dir.path().join("out/trace.json")), read(&dir.path().join("long/trace.json")));
    assert_eq!(read(&dir.path().join("out/mixture.json")), read(&dir.path().join("long/mixture.json")));
}

#[test]
fn stale_checkpoint_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), "spec.json", &banana_spec(2, 0.1));
    assert_eq!(code(&bvi(&["run", spec.to_str().unwrap()])), 0);
    write_spec(dir.path(), "spec.json", &banana_spec(2, 0.2));
    for args in [vec!["resume", spec.to_str().unwrap(), "--extra", "1"], vec!["eval", spec.to_str().unwrap()]] {
        let out = bvi(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).contains("checkpoint"), "{}", stderr(&out));
    }
}

#[test]
fn invalid_specs_exit_with_validation_code() {
    let dir = TempDir::new().unwrap();
    let mut negative = banana_spec(3, 0.1);
    negative["run"]["init_cov_scale"] = json!(-1.0);
    let cases = [
        (negative, "init_cov_scale"),
        (json!({"target": {"kind": "banana"}, "output_dir": "o", "extra": 1}), "extra"),
        (json!({"target": {"kind": "bananas"}, "output_dir": "o"}), "bananas"),
        (json!({"target": {"kind": "banana", "curvature": 0.0}, "output_dir": "o"}), "curvature"),
        (json!({"target": {"kind": "sensor", "path": "missing.json"}, "output_dir": "o"}), "target.path"),
        (
            json!({"target": {"kind": "gmm1d"}, "output_dir": "o",
                   "oracle": {"kind": "quadrature", "lower": [-1, -1], "upper": [1, 1], "points": 11}}),
            "oracle.lower",
        ),
    ];
    for (i, (spec, needle)) in cases.iter().enumerate() {
        let path = write_spec(dir.path(), &format!("bad{i}.json"), spec);
        let out = bvi(&["run", path.to_str().unwrap()]);
        assert_eq!(code(&out), 2, "case {i}: {}", stderr(&out));
        assert!(stderr(&out).contains(needle), "case {i}: {}", stderr(&out));
    }
    let out = bvi(&["run", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&bvi(&["no-such-command"])), 2);
}

#[test]
fn runtime_failures_exit_with_runtime_code() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "target": {"kind": "banana"},
        "oracle": {"kind": "mh", "n_samples": 2000, "burn_in": 0, "step_scales": [1000.0, 1000.0], "chains": 1},
        "output_dir": "out"
    });
    let path = write_spec(dir.path(), "spec.json", &spec);
    let out = bvi(&["reference", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn eval_of_the_exact_mixture_scores_zero() {
    let dir = TempDir::new().unwrap();
    let mixture = dir.path().join("exact.json");
    std::fs::write(&mixture, serde_json::to_string_pretty(gmm1d_four().mixture()).unwrap()).unwrap();
    let spec = json!({
        "target": {"kind": "gmm1d"},
        "run": {"elbo_eval_n": 20000},
        "oracle": {"kind": "quadrature", "lower": [-80], "upper": [80], "points": 16001},
        "output_dir": "out"
    });
    let path = write_spec(dir.path(), "spec.json", &spec);
    let out = bvi(&["eval", path.to_str().unwrap(), "--mixture", mixture.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics: Value = serde_json::from_str(&read(&dir.path().join("out/metrics.json"))).unwrap();
    let (elbo, se) = (metrics["elbo"].as_f64().unwrap(), metrics["elbo_se"].as_f64().unwrap());
    assert!(elbo.abs() <= 3.0 * se + 1e-12, "elbo {elbo} se {se}");
    assert!(metrics["rem"].as_f64().unwrap() < 1e-6, "{metrics}");
    assert_eq!(metrics["k"], json!(4));

    let oned = write_spec(dir.path(), "banana.json", &json!({"target": {"kind": "banana"}, "output_dir": "o"}));
    let out = bvi(&["eval", oned.to_str().unwrap(), "--mixture", mixture.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn reference_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "target": {"kind": "banana"},
        "oracle": {"kind": "mh", "n_samples": 2000, "burn_in": 5000, "step_scales": [3.0, 1.0], "chains": 2},
        "output_dir": "out"
    });
    let path = write_spec(dir.path(), "spec.json", &spec);
    let out = bvi(&["reference", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(dir.path().join("out/reference.json").is_file());
    assert_eq!(csv_rows(&dir.path().join("out/reference_samples.csv")).len(), 4000);

    let bare = write_spec(dir.path(), "bare.json", &json!({"target": {"kind": "banana"}, "output_dir": "o"}));
    assert_eq!(code(&bvi(&["reference", bare.to_str().unwrap()])), 2);
}

fn standard_normal_2d(dir: &Path) -> PathBuf {
    let path = dir.join("std2.json");
    let q = Mixture::single(bvi::GaussianComponent::isotropic(bvi::gaussmix::Point::zeros(2), 1.0).unwrap());
    std::fs::write(&path, serde_json::to_string_pretty(&q).unwrap()).unwrap();
    path
}

#[test]
fn grid_export_evaluates_log_q() {
    let dir = TempDir::new().unwrap();
    let mixture = standard_normal_2d(dir.path());
    let grid = dir.path().join("grid.csv");
    let m = mixture.to_str().unwrap();
    let out = bvi(&["grid", m, "--lower=-1,-1", "--upper=1,1", "--resolution", "3", "--out", grid.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(read(&grid).starts_with("x,y,log_q\n"));
    let rows = csv_rows(&grid);
    assert_eq!(rows.len(), 9);
    let centre = &rows[4];
    assert_eq!(&centre[..2], &[0.0, 0.0]);
    assert!((centre[2] + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    let corner = &rows[0];
    assert!((corner[2] + (2.0 * std::f64::consts::PI).ln() + 1.0).abs() < 1e-12);

    let out = bvi(&["grid", m, "--lower=-1,-1", "--upper=1,1", "--resolution", "0"]);
    assert_eq!(code(&out), 2);
    let out = bvi(&["grid", m, "--lower=-1", "--upper=1", "--resolution", "3"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sampling_is_seeded() {
    let dir = TempDir::new().unwrap();
    let mixture = standard_normal_2d(dir.path());
    let m = mixture.to_str().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let out = bvi(&["sample", m, "-n", "10", "--seed", "7", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    assert_eq!(read(&a), read(&b));
    assert_eq!(csv_rows(&a).len(), 10);
    assert_eq!(code(&bvi(&["sample", m, "-n", "0", "--out", a.to_str().unwrap()])), 2);
    assert_eq!(code(&bvi(&["sample", dir.path().join("none.json").to_str().unwrap(), "-n", "3"])), 2);
}

#[test]
fn gen_sensor_reproduces_the_checked_in_dataset() {
    let dir = TempDir::new().unwrap();
    let out_path = dir.path().join("sensor.json");
    let out = bvi(&["gen-sensor", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read(&out_path), read(&data_file("sensor_n11.json")));
}

#[test]
fn mixture_files_round_trip_byte_for_byte() {
    let dir = TempDir::new().unwrap();
    let spec = write_spec(dir.path(), "spec.json", &banana_spec(5, 0.1));
    assert_eq!(code(&bvi(&["run", spec.to_str().unwrap()])), 0);
    let text = read(&dir.path().join("out/mixture.json"));
    let q: Mixture = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string_pretty(&q).unwrap() + "\n", text);
}
