//! Replicated simulation grids.
//!
//! A grid point is one `(p, separation, ρ)` triple; points are enumerated
//! with `p` outermost and `ρ` innermost. Replication `r` draws its dataset
//! with seed `derive_seed(base_seed, r)`, so every grid point sees the same
//! seed sequence, and the algorithm runs with
//! `derive_seed(dataset_seed, ALGORITHM_STREAM)`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::SCHEMA_LINE;
use crate::iterate::{self, StoppingPolicy};
use crate::model::{self, Assignment, CovarianceModel, Dataset};
use crate::rng::{derive_seed, ALGORITHM_STREAM};
use crate::sdp::{self, SdpProblem};
use crate::select::SelectionRule;
use crate::simgen::{self, Scenario, ScenarioSpec};
use crate::spectral::{self, AffinityInput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Spectral clustering on the raw data.
    Spectral,
    /// The SDP relaxation on all coordinates, `A = XᵀX`.
    SdpFull,
    /// Iterative driver with the true covariance.
    Alg2,
    /// Iterative driver with ISEE and the rate threshold.
    Alg4,
    /// Iterative driver with ISEE and the maximal-inequality threshold.
    Alg6,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Spectral => "spectral",
            Algorithm::SdpFull => "sdp-full",
            Algorithm::Alg2 => "alg2",
            Algorithm::Alg4 => "alg4",
            Algorithm::Alg6 => "alg6",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::arg(format!("unknown algorithm `{s}`; expected spectral, sdp-full, alg2, alg4 or alg6")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n: usize,
    /// Support size of the discriminating direction.
    pub s: usize,
    pub p: Vec<usize>,
    pub separation: Vec<f64>,
    pub rho: Vec<f64>,
    pub algorithm: Algorithm,
    pub reps: usize,
    pub base_seed: u64,
    pub policy: StoppingPolicy,
    /// Result CSV; the summary goes next to it with a `.summary.csv` suffix.
    pub output: String,
    /// Timings make repeated runs differ, so they are opt-in.
    pub record_wall_ms: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Isotropic,
            n: 200,
            s: 10,
            p: vec![50, 500, 2000],
            separation: vec![5.0],
            rho: vec![0.0],
            algorithm: Algorithm::Alg2,
            reps: 20,
            base_seed: 1,
            policy: StoppingPolicy::default(),
            output: "results.csv".into(),
            record_wall_ms: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub p: usize,
    pub separation: f64,
    pub rho: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::arg("reps must be at least 1"));
        }
        if self.p.is_empty() || self.separation.is_empty() || self.rho.is_empty() {
            return Err(Error::arg("the scenario grid is empty"));
        }
        self.policy.validate()?;
        for g in self.grid() {
            self.spec(&g, 0).validate()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &p in &self.p {
            for &separation in &self.separation {
                for &rho in &self.rho {
                    out.push(GridPoint { p, separation, rho });
                }
            }
        }
        out
    }

    pub fn spec(&self, g: &GridPoint, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            scenario: self.scenario,
            p: g.p,
            n: self.n,
            s: self.s.min(g.p),
            separation: g.separation,
            rho: g.rho,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepResult {
    pub grid: GridPoint,
    pub rep: usize,
    pub algorithm: Algorithm,
    pub misclustering: Option<f64>,
    pub tp: Option<usize>,
    pub fp: Option<usize>,
    pub iterations: Option<usize>,
    pub stop_reason: Option<&'static str>,
    pub wall_ms: Option<f64>,
    /// `ok`, or the error that ended the replication.
    pub status: String,
}

/// Output of one algorithm on one dataset.
#[derive(Debug, Clone)]
pub struct AlgorithmOutput {
    pub assignment: Assignment,
    pub selected: Option<Vec<usize>>,
    pub iterations: Option<usize>,
    pub stop_reason: Option<&'static str>,
}

/// `cov` is required by [`Algorithm::Alg2`] and ignored otherwise.
pub fn run_algorithm(
    algorithm: Algorithm,
    data: &Dataset,
    cov: Option<&CovarianceModel>,
    policy: StoppingPolicy,
    seed: u64,
) -> Result<AlgorithmOutput> {
    let plain = |assignment| AlgorithmOutput { assignment, selected: None, iterations: None, stop_reason: None };
    let iterated = |r: iterate::RunResult| AlgorithmOutput {
        selected: Some(r.selected().to_vec()),
        iterations: Some(r.iterations()),
        stop_reason: Some(r.trace.stop_reason.as_str()),
        assignment: r.assignment,
    };
    match algorithm {
        Algorithm::Spectral => {
            Ok(plain(spectral::spectral_cluster(&AffinityInput::RawData(data.x.clone()), 2, derive_seed(seed, 0))?))
        }
        Algorithm::SdpFull => {
            let problem = SdpProblem::new(data.x.transpose() * &data.x, 2)?;
            let sol = sdp::solve(&problem, &iterate::driver_sdp_options())?;
            Ok(plain(spectral::spectral_cluster(&AffinityInput::Membership(sol.z), 2, derive_seed(seed, 1))?))
        }
        Algorithm::Alg2 => {
            let cov = cov.ok_or_else(|| Error::arg("alg2 needs the covariance"))?;
            Ok(iterated(iterate::run_known_cov(data, cov, policy, seed)?))
        }
        Algorithm::Alg4 => Ok(iterated(iterate::run_unknown_cov(data, policy, SelectionRule::IseeRate, seed)?)),
        Algorithm::Alg6 => Ok(iterated(iterate::run_unknown_cov(data, policy, SelectionRule::IseeMaximal, seed)?)),
    }
}

fn run_rep(cfg: &ExperimentConfig, grid: GridPoint, rep: usize) -> RepResult {
    let mut row = RepResult {
        grid,
        rep,
        algorithm: cfg.algorithm,
        misclustering: None,
        tp: None,
        fp: None,
        iterations: None,
        stop_reason: None,
        wall_ms: None,
        status: "ok".into(),
    };
    let data_seed = derive_seed(cfg.base_seed, rep as u64);
    let spec = cfg.spec(&grid, data_seed);
    let start = Instant::now();
    let outcome = simgen::generate(&spec).and_then(|data| {
        let cov = match cfg.algorithm {
            Algorithm::Alg2 => Some(simgen::make_covariance(&spec)?),
            _ => None,
        };
        let out = run_algorithm(cfg.algorithm, &data, cov.as_ref(), cfg.policy, derive_seed(data_seed, ALGORITHM_STREAM))?;
        let truth = data.truth.as_ref().ok_or_else(|| Error::arg("generated data lacks labels"))?;
        let mis = model::misclustering_rate(&out.assignment, truth)?;
        let conf = match &out.selected {
            Some(sel) => Some(model::selection_confusion(sel, &spec.support(), spec.p)?),
            None => None,
        };
        Ok((out, mis, conf))
    });
    if cfg.record_wall_ms {
        row.wall_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    match outcome {
        Ok((out, mis, conf)) => {
            row.misclustering = Some(mis);
            row.tp = conf.map(|c| c.0);
            row.fp = conf.map(|c| c.1);
            row.iterations = out.iterations;
            row.stop_reason = out.stop_reason;
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Runs every grid point × replication on `jobs` workers. Rows come back
/// ordered by (grid point, rep).
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<RepResult>> {
    cfg.validate()?;
    let tasks: Vec<(GridPoint, usize)> =
        cfg.grid().into_iter().flat_map(|g| (0..cfg.reps).map(move |r| (g, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| tasks.par_iter().map(|&(g, r)| run_rep(cfg, g, r)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub grid: GridPoint,
    pub algorithm: Algorithm,
    pub reps: usize,
    pub ok: usize,
    pub mean_misclustering: Option<f64>,
    pub mean_tp: Option<f64>,
    pub mean_fp: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_wall_ms: Option<f64>,
}

fn mean(vals: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = vals.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn summarize(rows: &[RepResult]) -> Vec<GridSummary> {
    let mut out: Vec<GridSummary> = Vec::new();
    for chunk in rows.chunk_by(|a, b| a.grid == b.grid && a.algorithm == b.algorithm) {
        let ok: Vec<&RepResult> = chunk.iter().filter(|r| r.status == "ok").collect();
        out.push(GridSummary {
            grid: chunk[0].grid,
            algorithm: chunk[0].algorithm,
            reps: chunk.len(),
            ok: ok.len(),
            mean_misclustering: mean(ok.iter().filter_map(|r| r.misclustering)),
            mean_tp: mean(ok.iter().filter_map(|r| r.tp.map(|v| v as f64))),
            mean_fp: mean(ok.iter().filter_map(|r| r.fp.map(|v| v as f64))),
            mean_iterations: mean(ok.iter().filter_map(|r| r.iterations.map(|v| v as f64))),
            mean_wall_ms: mean(chunk.iter().filter_map(|r| r.wall_ms)),
        });
    }
    out
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_results<W: Write>(mut w: W, rows: &[RepResult]) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    let mut csv = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    csv.write_record([
        "p", "sep", "rho", "rep", "algorithm", "misclustering", "tp", "fp", "iterations", "stop_reason", "wall_ms",
        "status",
    ])
    .map_err(csv_err)?;
    for r in rows {
        csv.write_record([
            r.grid.p.to_string(),
            float(r.grid.separation),
            float(r.grid.rho),
            r.rep.to_string(),
            r.algorithm.as_str().to_string(),
            opt(r.misclustering.map(float)),
            opt(r.tp),
            opt(r.fp),
            opt(r.iterations),
            opt(r.stop_reason),
            opt(r.wall_ms.map(|v| format!("{v:.3}"))),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(mut w: W, rows: &[GridSummary]) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    let mut csv = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    csv.write_record([
        "p",
        "sep",
        "rho",
        "algorithm",
        "reps",
        "ok",
        "mean_misclustering",
        "mean_tp",
        "mean_fp",
        "mean_iterations",
        "mean_wall_ms",
    ])
    .map_err(csv_err)?;
    for s in rows {
        csv.write_record([
            s.grid.p.to_string(),
            float(s.grid.separation),
            float(s.grid.rho),
            s.algorithm.as_str().to_string(),
            s.reps.to_string(),
            s.ok.to_string(),
            opt(s.mean_misclustering.map(float)),
            opt(s.mean_tp.map(float)),
            opt(s.mean_fp.map(float)),
            opt(s.mean_iterations.map(float)),
            opt(s.mean_wall_ms.map(|v| format!("{v:.3}"))),
        ])
        .map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numerical(format!("CSV writer failed: {other:?}")),
    }
}

/// `results.csv` → `results.summary.csv`.
pub fn summary_path(output: &str) -> String {
    match output.strip_suffix(".csv") {
        Some(stem) => format!("{stem}.summary.csv"),
        None => format!("{output}.summary.csv"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algorithm: Algorithm) -> ExperimentConfig {
        ExperimentConfig { p: vec![20], separation: vec![6.0], n: 40, reps: 1, algorithm, ..Default::default() }
    }

    fn render(cfg: &ExperimentConfig, jobs: usize) -> (String, String) {
        let rows = run(cfg, jobs).unwrap();
        let mut a = Vec::new();
        write_results(&mut a, &rows).unwrap();
        let mut b = Vec::new();
        write_summary(&mut b, &summarize(&rows)).unwrap();
        (String::from_utf8(a).unwrap(), String::from_utf8(b).unwrap())
    }

    #[test]
    fn one_row_per_rep() {
        let (csv, summary) = render(&small(Algorithm::Spectral), 1);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# schema=1");
        assert!(lines[1].starts_with("p,sep,rho,rep,algorithm,misclustering"));
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("20,6.0,0.0,0,spectral,"));
        assert!(lines[2].ends_with(",ok"));
        assert_eq!(summary.lines().count(), 3);
    }

    #[test]
    fn byte_identical_across_runs_and_workers() {
        let cfg = ExperimentConfig { reps: 3, p: vec![15, 25], ..small(Algorithm::Alg2) };
        let first = render(&cfg, 1);
        assert_eq!(first, render(&cfg, 1));
        assert_eq!(first, render(&cfg, 3));
    }

    #[test]
    fn every_algorithm_runs() {
        for alg in [Algorithm::Spectral, Algorithm::SdpFull, Algorithm::Alg2, Algorithm::Alg4, Algorithm::Alg6] {
            let cfg = ExperimentConfig { scenario: Scenario::ChainPrecision, rho: vec![0.3], ..small(alg) };
            let rows = run(&cfg, 1).unwrap();
            assert_eq!(rows[0].status, "ok", "{alg:?}");
            assert!(rows[0].misclustering.unwrap() <= 0.5);
        }
    }

    #[test]
    fn failures_become_status_rows() {
        // ρ = 0.9 makes the chain precision indefinite at p = 20
        let cfg = ExperimentConfig { scenario: Scenario::ChainPrecision, rho: vec![0.3], ..small(Algorithm::Alg4) };
        let row = run_rep(&cfg, GridPoint { p: 20, separation: 6.0, rho: 0.9 }, 0);
        assert!(row.status.starts_with("error:"), "{}", row.status);
        assert!(row.misclustering.is_none());
        let mut out = Vec::new();
        write_results(&mut out, &[row]).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.lines().nth(2).unwrap().contains(",error: "));
    }

    #[test]
    fn config_validation_and_json() {
        assert!(ExperimentConfig { reps: 0, ..Default::default() }.validate().is_err());
        assert!(ExperimentConfig { p: vec![], ..Default::default() }.validate().is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"p": [10], "algorithm": "sdp-full"}"#).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::SdpFull);
        assert_eq!(cfg.reps, 20);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
        assert_eq!("alg6".parse::<Algorithm>().unwrap(), Algorithm::Alg6);
        assert!("alg3".parse::<Algorithm>().is_err());
    }

    #[test]
    fn wall_ms_is_opt_in() {
        let cfg = ExperimentConfig { record_wall_ms: true, ..small(Algorithm::Spectral) };
        assert!(run(&cfg, 1).unwrap()[0].wall_ms.is_some());
        assert!(run(&small(Algorithm::Spectral), 1).unwrap()[0].wall_ms.is_none());
    }

    #[test]
    fn summary_path_suffix() {
        assert_eq!(summary_path("out/res.csv"), "out/res.summary.csv");
        assert_eq!(summary_path("res"), "res.summary.csv");
    }
}
