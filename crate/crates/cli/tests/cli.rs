use std::fs::{self, File};
use std::path::Path;
use std::process::{Command, Output};

use sdpkm::iterate::{self, StoppingPolicy};
use sdpkm::simgen::{self, ScenarioSpec};
use sdpkm::{io as dataio, model, CovarianceModel};

fn sdpkm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdpkm")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_fixture(dir: &Path, spec: &ScenarioSpec) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = simgen::generate(spec).unwrap();
    let data_path = dir.join("data.csv");
    dataio::write_dataset(File::create(&data_path).unwrap(), &data, true).unwrap();
    let sigma = simgen::make_covariance(spec).unwrap().covariance().unwrap();
    let sigma_path = dir.join("sigma.csv");
    dataio::write_matrix(File::create(&sigma_path).unwrap(), &sigma).unwrap();
    (data_path, sigma_path)
}

#[test]
fn print_defaults_is_valid_config() {
    let out = sdpkm(&["simulate", "--print-defaults"]);
    assert!(out.status.success());
    let cfg: sdpkm::experiment::ExperimentConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg, Default::default());
}

#[test]
fn simulate_writes_one_row_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"p": [20], "n": 40, "separation": [6.0], "reps": 1, "algorithm": "spectral"}"#).unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        let o = sdpkm(&["simulate", "--config", path(&cfg), "--out", path(out), "--jobs", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(
        fs::read_to_string(dir.path().join("a.summary.csv")).unwrap(),
        fs::read_to_string(dir.path().join("b.summary.csv")).unwrap()
    );
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"reps": 0}"#).unwrap();
    assert_eq!(sdpkm(&["simulate", "--config", path(&cfg)]).status.code(), Some(2));
    fs::write(&cfg, "{not json").unwrap();
    assert_eq!(sdpkm(&["simulate", "--config", path(&cfg)]).status.code(), Some(2));
    assert_eq!(sdpkm(&["simulate", "--algorithm", "alg9"]).status.code(), Some(2));
}

#[test]
fn cluster_round_trip_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ScenarioSpec::isotropic(30, 40, 5.0, 7);
    let (data_path, sigma_path) = write_fixture(dir.path(), &spec);
    let labels_path = dir.path().join("labels.csv");
    let o = sdpkm(&[
        "cluster",
        path(&data_path),
        "--algorithm",
        "alg2",
        "--sigma-file",
        path(&sigma_path),
        "--seed",
        "3",
        "--out",
        path(&labels_path),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cli_labels = dataio::read_labels(File::open(&labels_path).unwrap()).unwrap();

    let data = simgen::generate(&spec).unwrap();
    let sigma = dataio::read_matrix(File::open(&sigma_path).unwrap()).unwrap();
    let run = iterate::run_known_cov(&data, &CovarianceModel::Covariance(sigma), StoppingPolicy::default(), 3).unwrap();
    assert_eq!(cli_labels, run.assignment);
    let truth = data.truth.unwrap();
    let mis = model::misclustering_rate(&run.assignment, &truth).unwrap();
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains(&format!("misclustering: {mis}")), "{stderr}");
}

#[test]
fn cluster_option_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (data_path, _) = write_fixture(dir.path(), &ScenarioSpec::chain(12, 40, 0.3, 4.0, 2));
    assert_eq!(sdpkm(&["cluster", path(&data_path), "--algorithm", "alg2"]).status.code(), Some(2));
    let o = sdpkm(&["cluster", path(&data_path), "--algorithm", "alg4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let labels = dataio::read_labels(o.stdout.as_slice()).unwrap();
    assert_eq!(labels.n(), 40);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "# schema=1\nx1,x2\n1,2\n3,x\n").unwrap();
    let o = sdpkm(&["cluster", path(&bad), "--algorithm", "spectral"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));
}

fn one_d_fixture(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("fixture.csv");
    fs::write(&p, "# schema=1\nx1,x2,label\n0.0,0.5,1\n0.2,-0.5,1\n10.0,0.1,2\n10.2,-0.1,2\n").unwrap();
    p
}

#[test]
fn certify_passes_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = one_d_fixture(dir.path());
    let json = dir.path().join("report.json");
    let o = sdpkm(&[
        "certify",
        path(&data),
        "--support",
        "first:1",
        "--sigma2",
        "0.01",
        "--separation2",
        "100",
        "--out",
        path(&json),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    for c in ["C1", "C2", "C3", "C4", "C5"] {
        assert!(text.contains(&format!("{c} PASS")), "{text}");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let u = report["u_s"].as_f64().unwrap();
    assert!((u - 98.0).abs() < 1e-9);

    let above = format!("{}", 1.01 * u);
    let o = sdpkm(&["certify", path(&data), "--support", "1", "--lambda", &above]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn certify_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = one_d_fixture(dir.path());
    assert_eq!(sdpkm(&["certify", path(&data), "--support", "first:x", "--lambda", "1"]).status.code(), Some(2));
    assert_eq!(sdpkm(&["certify", path(&data), "--support", "3", "--lambda", "1"]).status.code(), Some(2));
    assert_eq!(sdpkm(&["certify", path(&data), "--support", "first:1"]).status.code(), Some(2));
    let single = dir.path().join("single.csv");
    fs::write(&single, "x1,label\n0.0,1\n0.1,1\n5.0,2\n").unwrap();
    assert_eq!(sdpkm(&["certify", path(&single), "--support", "1", "--lambda", "1"]).status.code(), Some(2));
}
