use sdpkm::experiment::{self, Algorithm, ExperimentConfig};
use sdpkm::iterate::{self, StoppingPolicy};
use sdpkm::model;
use sdpkm::select::SelectionRule;
use sdpkm::simgen::{self, ScenarioSpec};

#[test]
fn known_cov_driver_recovers_sparse_clusters() {
    let spec = ScenarioSpec::isotropic(300, 120, 6.0, 11);
    let data = simgen::generate(&spec).unwrap();
    let cov = simgen::make_covariance(&spec).unwrap();
    let run = iterate::run_known_cov(&data, &cov, StoppingPolicy::default(), 5).unwrap();
    let truth = data.truth.as_ref().unwrap();
    assert!(model::misclustering_rate(&run.assignment, truth).unwrap() <= 0.05);
    assert!(run.iterations() >= 1 && run.iterations() <= 100);
    let again = iterate::run_known_cov(&data, &cov, StoppingPolicy::default(), 5).unwrap();
    assert_eq!(run.assignment, again.assignment);
}

#[test]
fn unknown_cov_driver_improves_on_spectral_start() {
    let data = simgen::generate(&ScenarioSpec::chain(40, 500, 0.45, 4.0, 3)).unwrap();
    let run = iterate::run_unknown_cov(&data, StoppingPolicy::default(), SelectionRule::IseeRate, 9).unwrap();
    let truth = data.truth.as_ref().unwrap();
    let mis = model::misclustering_rate(&run.assignment, truth).unwrap();
    let start = model::misclustering_rate(&run.initial, truth).unwrap();
    assert!(mis <= 0.15 && mis <= start, "misclustering {mis}, spectral start {start}");
}

#[test]
fn experiment_rows_do_not_depend_on_jobs() {
    let cfg = ExperimentConfig {
        n: 40,
        p: vec![20, 30],
        reps: 3,
        algorithm: Algorithm::Alg2,
        ..ExperimentConfig::default()
    };
    let serial = experiment::run(&cfg, 1).unwrap();
    let parallel = experiment::run(&cfg, 3).unwrap();
    assert_eq!(serial.len(), 6);
    let mut a = Vec::new();
    let mut b = Vec::new();
    experiment::write_results(&mut a, &serial).unwrap();
    experiment::write_results(&mut b, &parallel).unwrap();
    assert_eq!(a, b);
}
