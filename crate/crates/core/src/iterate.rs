//! Iterative select/cluster drivers and their early-stopping rule.
//!
//! Both drivers start from spectral clustering on the raw data and then
//! alternate between selecting coordinates from the current partition and
//! re-clustering with the SDP relaxation restricted to those coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isee;
use crate::linalg;
use crate::model::{self, Assignment, CovarianceModel, Dataset};
use crate::rng::derive_seed;
use crate::sdp::{self, SdpOptions, SdpProblem, SdpSolution, WarmStart};
use crate::select::{self, SelectionRule};
use crate::spectral::{self, AffinityInput};

/// Floor on the denominator of a relative change.
const REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoppingPolicy {
    /// Maximum number of iterations `T`.
    pub max_iter: usize,
    /// Warm-up `w` before the windowed clause may fire.
    pub warmup: usize,
    /// Window length `η`.
    pub window: usize,
    /// Threshold `π`, in percent.
    pub pi_percent: f64,
}

impl Default for StoppingPolicy {
    fn default() -> Self {
        StoppingPolicy { max_iter: 100, warmup: 10, window: 5, pi_percent: 1.0 }
    }
}

impl StoppingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.window == 0 || !(self.pi_percent > 0.0 && self.pi_percent.is_finite()) {
            return Err(Error::arg(format!("invalid stopping policy {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxIter,
    ObjectiveConverged,
    WindowStalled,
    EmptySelection,
    /// The previous partition has a cluster too small to continue from.
    DegenerateCluster,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::MaxIter => "max-iter",
            StopReason::ObjectiveConverged => "objective-converged",
            StopReason::WindowStalled => "window-stalled",
            StopReason::EmptySelection => "empty-selection",
            StopReason::DegenerateCluster => "degenerate-cluster",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepFlags {
    pub sdp_converged: bool,
    pub sdp_iterations: usize,
    pub warm_started: bool,
    /// The similarity matched the previous iteration's, so its solve was reused.
    pub reused: bool,
    pub isee_ridged_blocks: usize,
    pub isee_unconverged_blocks: usize,
    /// Constraint violations of this iteration's fresh SDP solution, when
    /// [`RunOptions::audit_feasibility`] is set.
    pub feasibility: Option<model::FeasibilityReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    pub selected: Vec<usize>,
    #[serde(skip)]
    pub assignment: Assignment,
    pub sdp_objective: f64,
    /// `⟨A, Z⟩` at the rounded membership matrix.
    pub kmeans_objective: f64,
    pub misclustering: Option<f64>,
    pub flags: StepFlags,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub assignment: Assignment,
    pub initial: Assignment,
    pub trace: IterationTrace,
}

impl RunResult {
    pub fn iterations(&self) -> usize {
        self.trace.records.len()
    }

    pub fn selected(&self) -> &[usize] {
        self.trace.records.last().map(|r| r.selected.as_slice()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStartMode {
    Cold,
    /// The previous rounded membership matrix, when `|S|` is unchanged.
    RoundedSameSize,
    /// The previous solve's iterate and multiplier, always.
    Previous,
}

/// Knobs beyond the stopping policy.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub policy: StoppingPolicy,
    pub sdp: SdpOptions,
    pub warm_start: WarmStartMode,
    /// Record a feasibility report for every fresh solve.
    pub audit_feasibility: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            policy: StoppingPolicy::default(),
            sdp: driver_sdp_options(),
            warm_start: WarmStartMode::Previous,
            audit_feasibility: false,
        }
    }
}

/// Solver settings used inside the drivers. Only the spectral rounding of
/// `Z` is consumed, which settles long before the residuals reach the
/// standalone default.
pub fn driver_sdp_options() -> SdpOptions {
    SdpOptions { tol: 1e-4, ..SdpOptions::default() }
}

fn relative_change(now: f64, before: f64) -> f64 {
    (now - before).abs() / before.abs().max(REL_FLOOR)
}

fn step_clause(obj: &[f64], pi: f64) -> bool {
    let t = obj.len();
    t >= 2 && relative_change(obj[t - 1], obj[t - 2]) < pi
}

fn window_clause(obj: &[f64], warmup: usize, window: usize, pi: f64) -> bool {
    let t = obj.len();
    if t <= warmup || t <= window {
        return false;
    }
    let best = |upto: usize| obj[..upto].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let now = best(t);
    let then = best(t - window);
    (now - then) / then.abs().max(REL_FLOOR) < pi
}

/// Early-stopping rule on two objective sequences, index `t − 1` holding
/// iteration `t`. Stops when, for each sequence, either the last relative
/// change is below `π%` or, past the warm-up, the running best improved by
/// less than `π%` over the last `η` iterations.
pub fn should_stop_objectives(sdp: &[f64], kmeans: &[f64], policy: &StoppingPolicy) -> Option<StopReason> {
    let pi = policy.pi_percent / 100.0;
    let step = step_clause(sdp, pi) && step_clause(kmeans, pi);
    if step {
        return Some(StopReason::ObjectiveConverged);
    }
    let either = |o: &[f64]| step_clause(o, pi) || window_clause(o, policy.warmup, policy.window, pi);
    (either(sdp) && either(kmeans)).then_some(StopReason::WindowStalled)
}

pub fn should_stop(records: &[IterationRecord], policy: &StoppingPolicy) -> Option<StopReason> {
    let sdp: Vec<f64> = records.iter().map(|r| r.sdp_objective).collect();
    let km: Vec<f64> = records.iter().map(|r| r.kmeans_objective).collect();
    should_stop_objectives(&sdp, &km, policy)
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub assignment: Assignment,
    pub solution: SdpSolution,
    pub similarity: DMatrix<f64>,
    pub kmeans_objective: f64,
}

/// One SDP K-means step: similarity `X̃_Sᵀ Σ_SS X̃_S`, relaxation with
/// `K = 2`, spectral rounding of the solution. A solve that stops at the
/// iteration cap is returned with `converged = false`.
pub fn sdp_kmeans_step(xt_s: &DMatrix<f64>, sigma_ss: &DMatrix<f64>, seed: u64) -> Result<StepOutput> {
    sdp_kmeans_step_with(xt_s, sigma_ss, seed, &driver_sdp_options(), &WarmStart::default())
}

pub fn sdp_kmeans_step_with(
    xt_s: &DMatrix<f64>,
    sigma_ss: &DMatrix<f64>,
    seed: u64,
    opts: &SdpOptions,
    warm: &WarmStart,
) -> Result<StepOutput> {
    if xt_s.nrows() == 0 {
        return Err(Error::arg("SDP step needs at least one selected coordinate"));
    }
    let a = sdp::similarity_known_cov(xt_s, sigma_ss)?;
    cluster_similarity(a, seed, opts, warm)
}

fn cluster_similarity(a: DMatrix<f64>, seed: u64, opts: &SdpOptions, warm: &WarmStart) -> Result<StepOutput> {
    let problem = SdpProblem::new(a, 2)?;
    let solution = sdp::solve_warm(&problem, opts, warm)?;
    let assignment = spectral::spectral_cluster(&AffinityInput::Membership(solution.z.clone()), 2, seed)?;
    let z_int = model::membership_from_labels(&assignment)?;
    let kmeans_objective = linalg::frob_dot(problem.a(), z_int.matrix());
    Ok(StepOutput { assignment, solution, similarity: problem.a().clone(), kmeans_objective })
}

/// `(Σ_{G₁}(x−x̄₁)(x−x̄₁)ᵀ + Σ_{G₂}(x−x̄₂)(x−x̄₂)ᵀ) / (n − K)` on the given rows.
pub fn pooled_covariance(x: &DMatrix<f64>, assignment: &Assignment, rows: &[usize]) -> Result<DMatrix<f64>> {
    let n = x.ncols();
    if assignment.n() != n {
        return Err(Error::arg("assignment length differs from the number of observations"));
    }
    let k = assignment.k();
    if n <= k {
        return Err(Error::arg("pooled covariance needs more observations than clusters"));
    }
    let xs = linalg::select_rows(x, rows);
    let mut centred = xs.clone();
    for label in 1..=k {
        let members = assignment.members(label);
        if members.is_empty() {
            continue;
        }
        let mean = linalg::column_mean(&xs, &members);
        for &i in &members {
            let mut col = centred.column_mut(i);
            col -= &mean;
        }
    }
    let cov = &centred * centred.transpose() / (n - k) as f64;
    Ok(linalg::symmetrize(&cov))
}

/// Difference of the cluster means of the columns of `m` under a two-cluster partition.
pub fn mean_difference(m: &DMatrix<f64>, assignment: &Assignment) -> DVector<f64> {
    linalg::column_mean(m, &assignment.members(1)) - linalg::column_mean(m, &assignment.members(2))
}

/// What a driver needs for one iteration, given the previous partition.
struct Prepared {
    selected: Vec<usize>,
    xt_s: DMatrix<f64>,
    sigma_ss: DMatrix<f64>,
    flags: StepFlags,
}

enum Prepare {
    Ready(Prepared),
    Stop(StopReason),
}

fn drive(
    data: &Dataset,
    seed: u64,
    opts: &RunOptions,
    mut prepare: impl FnMut(&Assignment) -> Result<Prepare>,
) -> Result<RunResult> {
    opts.policy.validate()?;
    let x = &data.x;
    let initial = spectral::spectral_cluster(&AffinityInput::RawData(x.clone()), 2, derive_seed(seed, 0))?;
    let mut current = initial.clone();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut last: Option<StepOutput> = None;
    let mut stop = StopReason::MaxIter;

    for t in 1..=opts.policy.max_iter {
        let prep = match prepare(&current)? {
            Prepare::Ready(p) => p,
            Prepare::Stop(reason) => {
                stop = reason;
                break;
            }
        };
        let mut flags = prep.flags;
        let a = sdp::similarity_known_cov(&prep.xt_s, &prep.sigma_ss)?;
        let step = match &last {
            Some(prev) if prev.similarity == a => {
                flags.reused = true;
                prev.clone()
            }
            _ => {
                let warm = match (&last, records.last(), opts.warm_start) {
                    (Some(prev), Some(rec), WarmStartMode::RoundedSameSize)
                        if rec.selected.len() == prep.selected.len() =>
                    {
                        flags.warm_started = true;
                        WarmStart { z: Some(model::membership_from_labels(&prev.assignment)?.into_inner()), multiplier: None }
                    }
                    (Some(prev), Some(_), WarmStartMode::Previous) => {
                        flags.warm_started = true;
                        WarmStart { z: Some(prev.solution.z.clone()), multiplier: Some(prev.solution.multiplier.clone()) }
                    }
                    _ => WarmStart::default(),
                };
                cluster_similarity(a, derive_seed(seed, t as u64), &opts.sdp, &warm)?
            }
        };
        flags.sdp_converged = step.solution.converged;
        flags.sdp_iterations = if flags.reused { 0 } else { step.solution.iterations };
        if opts.audit_feasibility && !flags.reused {
            flags.feasibility = Some(step.solution.feasibility(2)?);
        }
        let misclustering = match &data.truth {
            Some(truth) => Some(model::misclustering_rate(&step.assignment, truth)?),
            None => None,
        };
        records.push(IterationRecord {
            iteration: t,
            selected: prep.selected,
            assignment: step.assignment.clone(),
            sdp_objective: step.solution.objective,
            kmeans_objective: step.kmeans_objective,
            misclustering,
            flags,
        });
        current = step.assignment.clone();
        last = Some(step);
        if let Some(reason) = should_stop(&records, &opts.policy) {
            stop = reason;
            break;
        }
    }
    Ok(RunResult { assignment: current, initial, trace: IterationTrace { records, stop_reason: stop } })
}

/// Iterative SDP K-means with a known covariance.
pub fn run_known_cov(data: &Dataset, cov: &CovarianceModel, policy: StoppingPolicy, seed: u64) -> Result<RunResult> {
    run_known_cov_with(data, cov, seed, &RunOptions { policy, ..RunOptions::default() })
}

pub fn run_known_cov_with(data: &Dataset, cov: &CovarianceModel, seed: u64, opts: &RunOptions) -> Result<RunResult> {
    let (p, n) = data.x.shape();
    if cov.dim() != p {
        return Err(Error::arg(format!("covariance has dimension {} but the data has p = {p}", cov.dim())));
    }
    let sigma = cov.covariance()?;
    let omega = cov.precision()?;
    let omega_diag = omega.diagonal();
    let xt = &omega * &data.x;
    drive(data, seed, opts, |prev| {
        let (n1, n2) = (prev.members(1).len(), prev.members(2).len());
        if n1 == 0 || n2 == 0 {
            return Ok(Prepare::Stop(StopReason::DegenerateCluster));
        }
        let beta = mean_difference(&xt, prev);
        let selected = select::select_known_cov(&beta, &omega_diag, n, p, n1, n2)?;
        if selected.is_empty() {
            return Ok(Prepare::Stop(StopReason::EmptySelection));
        }
        Ok(Prepare::Ready(Prepared {
            xt_s: linalg::select_rows(&xt, &selected),
            sigma_ss: linalg::submatrix(&sigma, &selected, &selected),
            selected,
            flags: StepFlags::default(),
        }))
    })
}

/// Iterative SDP K-means with the covariance estimated through ISEE.
pub fn run_unknown_cov(data: &Dataset, policy: StoppingPolicy, rule: SelectionRule, seed: u64) -> Result<RunResult> {
    run_unknown_cov_with(data, rule, seed, &RunOptions { policy, ..RunOptions::default() })
}

pub fn run_unknown_cov_with(data: &Dataset, rule: SelectionRule, seed: u64, opts: &RunOptions) -> Result<RunResult> {
    if rule == SelectionRule::KnownCovMaximal {
        return Err(Error::arg("the unknown-covariance driver takes the isee-rate or isee-maximal rule"));
    }
    let x = &data.x;
    let (p, n) = x.shape();
    drive(data, seed, opts, |prev| {
        let (n1, n2) = (prev.members(1).len(), prev.members(2).len());
        if n1.min(n2) < isee::MIN_CLUSTER_SIZE {
            return Ok(Prepare::Stop(StopReason::DegenerateCluster));
        }
        let est = isee::isee(x, prev)?;
        let selected = match rule {
            SelectionRule::IseeRate => select::select_isee(&est.mu_diff(), n, p)?,
            _ => {
                let beta = mean_difference(&est.xtilde, prev);
                select::select_isee_maximal(&beta, &est.omega_diag, n, p, n1, n2)?
            }
        };
        if selected.is_empty() {
            return Ok(Prepare::Stop(StopReason::EmptySelection));
        }
        let flags = StepFlags {
            isee_ridged_blocks: est.per_block.iter().filter(|b| b.ridged).count(),
            isee_unconverged_blocks: est.per_block.iter().filter(|b| !b.lasso_converged).count(),
            ..StepFlags::default()
        };
        Ok(Prepare::Ready(Prepared {
            xt_s: linalg::select_rows(&est.xtilde, &selected),
            sigma_ss: pooled_covariance(x, prev, &selected)?,
            selected,
            flags,
        }))
    })
}
