use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdpkm::certificate::{self, CertificateInput};
use sdpkm::experiment::{self, Algorithm, ExperimentConfig};
use sdpkm::iterate::StoppingPolicy;
use sdpkm::{io as dataio, linalg, model, CovarianceModel, Error};

#[derive(Parser)]
#[command(name = "sdpkm", version, about = "Sparse iterative SDP K-means for Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replicated simulation grid and write result and summary CSVs.
    Simulate(SimulateArgs),
    /// Cluster one data CSV and write its labels.
    Cluster(ClusterArgs),
    /// Check the exact-recovery certificate for a labelled data CSV.
    Certify(CertifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `algorithm`.
    #[arg(long)]
    algorithm: Option<String>,
    /// Print the default config as JSON and exit.
    #[arg(long)]
    print_defaults: bool,
}

#[derive(Args)]
struct ClusterArgs {
    /// Data CSV (`x1..xp[,label]`).
    data: PathBuf,
    #[arg(long, default_value = "alg4")]
    algorithm: String,
    /// Covariance CSV, required by alg2.
    #[arg(long)]
    sigma_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Labels CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Data CSV with a label column.
    data: PathBuf,
    /// `first:s` or a comma-separated list of 1-based feature indices.
    #[arg(long)]
    support: String,
    /// Dual trace variable; otherwise computed from --sigma2 and --separation2.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Squared separation restricted to the true support.
    #[arg(long)]
    separation2: Option<f64>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Exit code 2: usage or input problems; 3: numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) | Error::DegenerateCertificate { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Cluster(a) => cluster(a),
        Command::Certify(a) => certify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn open(path: &Path) -> sdpkm::Result<File> {
    File::open(path).map_err(|e| Error::Argument(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> sdpkm::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate(a: SimulateArgs) -> sdpkm::Result<()> {
    if a.print_defaults {
        println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
        return Ok(());
    }
    let mut cfg: ExperimentConfig = match &a.config {
        Some(path) => serde_json::from_reader(open(path)?)
            .map_err(|e| Error::Argument(format!("invalid config {}: {e}", path.display())))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = &a.out {
        cfg.output = out.to_string_lossy().into_owned();
    }
    if let Some(alg) = &a.algorithm {
        cfg.algorithm = alg.parse()?;
    }
    cfg.validate()?;
    let rows = experiment::run(&cfg, a.jobs)?;
    let mut w = create(Path::new(&cfg.output))?;
    experiment::write_results(&mut w, &rows)?;
    w.flush()?;
    let summary = experiment::summary_path(&cfg.output);
    let mut w = create(Path::new(&summary))?;
    experiment::write_summary(&mut w, &experiment::summarize(&rows))?;
    w.flush()?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    eprintln!("wrote {} rows to {} and the summary to {summary} ({failed} failed)", rows.len(), cfg.output);
    Ok(())
}

fn cluster(a: ClusterArgs) -> sdpkm::Result<()> {
    let algorithm: Algorithm = a.algorithm.parse()?;
    let data = dataio::read_dataset(open(&a.data)?)?;
    let cov = match (&a.sigma_file, algorithm) {
        (Some(path), _) => {
            let sigma = dataio::read_matrix(open(path)?)?;
            if sigma.shape() != (data.p(), data.p()) {
                return Err(Error::Argument(format!(
                    "covariance is {}x{} but the data has p = {}",
                    sigma.nrows(),
                    sigma.ncols(),
                    data.p()
                )));
            }
            Some(CovarianceModel::Covariance(sigma).validated()?)
        }
        (None, Algorithm::Alg2) => return Err(Error::Argument("alg2 needs --sigma-file".into())),
        (None, _) => None,
    };
    let out = experiment::run_algorithm(algorithm, &data, cov.as_ref(), StoppingPolicy::default(), a.seed)?;
    match &a.out {
        Some(path) => {
            let mut w = create(path)?;
            dataio::write_labels(&mut w, &out.assignment)?;
            w.flush()?;
        }
        None => dataio::write_labels(io::stdout().lock(), &out.assignment)?,
    }
    if let Some(truth) = &data.truth {
        if truth.k() == out.assignment.k() {
            eprintln!("misclustering: {}", model::misclustering_rate(&out.assignment, truth)?);
        }
    }
    if let Some(reason) = out.stop_reason {
        eprintln!("iterations: {} ({reason})", out.iterations.unwrap_or(0));
    }
    Ok(())
}

/// Parses `first:s` or a 1-based index list into sorted 0-based indices.
fn parse_support(spec: &str, p: usize) -> sdpkm::Result<Vec<usize>> {
    let bad = |msg: String| Error::Argument(format!("bad --support `{spec}`: {msg}"));
    let mut idx: Vec<usize> = if let Some(s) = spec.strip_prefix("first:") {
        let s: usize = s.trim().parse().map_err(|_| bad("expected first:<count>".into()))?;
        if s == 0 || s > p {
            return Err(bad(format!("count must lie in 1..={p}")));
        }
        (0..s).collect()
    } else {
        spec.split(',')
            .map(|f| match f.trim().parse::<usize>() {
                Ok(j) if (1..=p).contains(&j) => Ok(j - 1),
                _ => Err(bad(format!("`{}` is not an index in 1..={p}", f.trim()))),
            })
            .collect::<sdpkm::Result<_>>()?
    };
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

fn certify(a: CertifyArgs) -> sdpkm::Result<()> {
    let data = dataio::read_dataset(open(&a.data)?)?;
    let truth = data.truth.clone().ok_or_else(|| Error::Argument("certify needs a label column".into()))?;
    let support = parse_support(&a.support, data.p())?;
    if let Some(k) = truth.sizes().iter().position(|&s| s < 2) {
        return Err(Error::Argument(format!("cluster {} has fewer than two members", k + 1)));
    }
    let input = CertificateInput {
        x_s: linalg::select_rows(&data.x, &support),
        truth,
        lambda: a.lambda,
        sigma2: a.sigma2,
        separation2: a.separation2,
    };
    let report = certificate::check_conditions(&input)?;
    let mut out = io::stdout().lock();
    for c in &report.conditions {
        writeln!(out, "{} {} margin={:e} value={:e}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.margin, c.value)?;
    }
    writeln!(out, "U_S = {}", report.u_s)?;
    writeln!(out, "L1_S = {}", report.l1_s)?;
    writeln!(out, "lambda = {}", report.lambda_used)?;
    writeln!(out, "W_min_eig = {:e}", report.w_min_eig)?;
    let json = serde_json::to_string(&report)?;
    writeln!(out, "{json}")?;
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        writeln!(w, "{json}")?;
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_specs() {
        assert_eq!(parse_support("first:3", 10).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_support("4, 2,2", 10).unwrap(), vec![1, 3]);
        assert!(parse_support("first:0", 10).is_err());
        assert!(parse_support("first:11", 10).is_err());
        assert!(parse_support("0,1", 10).is_err());
        assert!(parse_support("a", 10).is_err());
        assert!(parse_support("", 10).is_err());
    }
}
