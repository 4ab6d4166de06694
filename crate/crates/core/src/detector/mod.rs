//! Phase II: covariance-based maximum-likelihood activity detection.
//!
//! The detector minimizes f(γ) = log det Σ(γ) + tr(Σ(γ)⁻¹ Σ̂) over the box
//! γ ∈ [0, 1]ᴺ, where Σ(γ) = Σ_n γ_n s_n s_nᴴ + σ² I. All solvers share the
//! closed-form coordinate step and keep Σ⁻¹ current with rank-one updates.
//!
//! Complexity is counted in FLOPs with two units only: 5·L² per coordinate
//! update and 4·L² per gradient component. Sorting, set bookkeeping and
//! termination checks are free.

mod active_set;
mod cd;
mod kcd;

pub use active_set::{initial_max_violation, solve_active_set_cd, solve_active_set_cd_observed};
pub use cd::{solve_cd, solve_cd_observed};
pub use kcd::{solve_kcd, solve_kcd_observed, KcdParams};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimator::sample_covariance;
use crate::linalg::{self, dot_conj, matvec, rank_one_downdate};
use crate::system::ReceivedSignal;
use crate::{CMatrix, C64};

/// Default cap on outer iterations for every solver.
pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;

/// Below this magnitude the rank-one denominator triggers a full re-inversion.
const RANK_ONE_GUARD: f64 = 1e-12;

/// FLOPs charged for one coordinate update.
pub fn update_flops(l: usize) -> u64 {
    5 * (l * l) as u64
}

/// FLOPs charged for one gradient component.
pub fn gradient_flops(l: usize) -> u64 {
    4 * (l * l) as u64
}

/// Phase II inputs.
#[derive(Debug, Clone)]
pub struct DetectionProblem {
    preambles: CMatrix,
    sigma_hat: CMatrix,
    sigma2: f64,
}

impl DetectionProblem {
    pub fn new(preambles: CMatrix, sigma_hat: CMatrix, sigma2: f64) -> Result<Self> {
        let l = preambles.nrows();
        if l == 0 || preambles.ncols() == 0 {
            return Err(invalid("preamble matrix must be nonempty"));
        }
        if sigma_hat.shape() != (l, l) {
            return Err(invalid(format!(
                "sample covariance is {:?}, expected {l}x{l}",
                sigma_hat.shape()
            )));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(invalid("sigma2 must be positive and finite"));
        }
        let scale = sigma_hat.norm().max(1.0);
        if (&sigma_hat - sigma_hat.adjoint()).norm() > 1e-9 * scale {
            return Err(invalid("sample covariance must be Hermitian"));
        }
        Ok(Self { preambles, sigma_hat, sigma2 })
    }

    /// Builds the problem from a received Phase II block.
    pub fn from_signal(preambles: CMatrix, signal: &ReceivedSignal, sigma2: f64) -> Result<Self> {
        let sigma_hat = sample_covariance(signal);
        Self::new(preambles, sigma_hat, sigma2)
    }

    pub fn preambles(&self) -> &CMatrix {
        &self.preambles
    }

    pub fn sigma_hat(&self) -> &CMatrix {
        &self.sigma_hat
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn n_devices(&self) -> usize {
        self.preambles.ncols()
    }

    pub fn l_phase2(&self) -> usize {
        self.preambles.nrows()
    }

    fn preamble(&self, n: usize) -> &[C64] {
        let l = self.l_phase2();
        &self.preambles.as_slice()[n * l..(n + 1) * l]
    }

    /// Σ(γ) assembled directly.
    pub fn covariance(&self, gamma: &[f64]) -> CMatrix {
        linalg::covariance(&self.preambles, gamma, self.sigma2)
    }
}

/// Mutable solver state: soft activities, maintained Σ⁻¹ and counters.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub gamma: Vec<f64>,
    pub sigma_inv: CMatrix,
    /// Last computed V(γ_n) per coordinate.
    pub violations: Vec<f64>,
    /// b_n: how often V(γ_n) was computed below the stall threshold.
    pub stall_counts: Vec<u32>,
    pub candidate_set: Vec<usize>,
    pub iteration: usize,
    pub flops: u64,
    pub coord_updates: u64,
    pub grad_computations: u64,
    u: Vec<C64>,
    w: Vec<C64>,
}

impl SolverState {
    /// γ = 0, Σ⁻¹ = I/σ².
    pub fn new(problem: &DetectionProblem) -> Self {
        let n = problem.n_devices();
        let l = problem.l_phase2();
        Self {
            gamma: vec![0.0; n],
            sigma_inv: CMatrix::from_diagonal_element(l, l, C64::new(1.0 / problem.sigma2, 0.0)),
            violations: vec![f64::INFINITY; n],
            stall_counts: vec![0; n],
            candidate_set: (0..n).collect(),
            iteration: 0,
            flops: 0,
            coord_updates: 0,
            grad_computations: 0,
            u: vec![C64::new(0.0, 0.0); l],
            w: vec![C64::new(0.0, 0.0); l],
        }
    }

    /// Starts from an arbitrary feasible γ with an exact inverse.
    pub fn at(problem: &DetectionProblem, gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() != problem.n_devices() {
            return Err(invalid("gamma length does not match the device count"));
        }
        if gamma.iter().any(|g| !(0.0..=1.0).contains(g)) {
            return Err(invalid("gamma entries must lie in [0, 1]"));
        }
        let mut state = Self::new(problem);
        state.sigma_inv = linalg::hpd_inverse(&problem.covariance(&gamma))?;
        state.gamma = gamma;
        Ok(state)
    }

    /// Recomputes Σ⁻¹ from γ by factorization.
    pub fn refresh_inverse(&mut self, problem: &DetectionProblem) -> Result<()> {
        self.sigma_inv = linalg::hpd_inverse(&problem.covariance(&self.gamma))?;
        Ok(())
    }

    /// ‖Σ⁻¹_maintained − Σ⁻¹_direct‖_F / ‖Σ⁻¹_direct‖_F.
    pub fn inverse_drift(&self, problem: &DetectionProblem) -> Result<f64> {
        let direct = linalg::hpd_inverse(&problem.covariance(&self.gamma))?;
        Ok(linalg::frobenius_relative_error(&self.sigma_inv, &direct))
    }

    /// `(sᴴΣ⁻¹s, sᴴΣ⁻¹Σ̂Σ⁻¹s)`, leaving Σ⁻¹s in `self.u`.
    fn quadratic_forms(&mut self, problem: &DetectionProblem, n: usize) -> (f64, f64) {
        let s = problem.preamble(n);
        matvec(&self.sigma_inv, s, &mut self.u);
        let a = dot_conj(s, &self.u).re;
        matvec(&problem.sigma_hat, &self.u, &mut self.w);
        let q = dot_conj(&self.u, &self.w).re;
        (a, q)
    }

    pub fn max_violation(&self) -> f64 {
        self.violations.iter().copied().fold(0.0, f64::max)
    }

    fn expect_flops(&self, l: usize) -> u64 {
        update_flops(l) * self.coord_updates + gradient_flops(l) * self.grad_computations
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    IterationCap,
    /// No coordinate was eligible for an update while ‖V‖∞ > ε: Active Set CD
    /// with nothing at or above ω, or K-CD with a zero budget.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub gamma: Vec<f64>,
    pub converged: bool,
    pub status: SolverStatus,
    pub iterations: usize,
    pub coord_updates: u64,
    pub grad_computations: u64,
    pub flops: u64,
    /// Final f(γ), evaluated by factorization.
    pub objective: f64,
    /// Largest last-known violation over all coordinates when the solver
    /// stopped. For K-CD this includes stale values of frozen coordinates.
    pub max_violation: f64,
}

impl SolverReport {
    fn from_state(problem: &DetectionProblem, state: &SolverState, status: SolverStatus) -> Result<Self> {
        debug_assert_eq!(state.flops, state.expect_flops(problem.l_phase2()));
        Ok(Self {
            gamma: state.gamma.clone(),
            converged: status == SolverStatus::Converged,
            status,
            iterations: state.iteration,
            coord_updates: state.coord_updates,
            grad_computations: state.grad_computations,
            flops: state.flops,
            objective: objective(problem, &state.gamma)?,
            max_violation: state.max_violation(),
        })
    }
}

/// Outer-loop stopping rule shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once ‖V(γ)‖∞ ≤ epsilon.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl StopRule {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, max_iterations: DEFAULT_MAX_ITERATIONS }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

impl Default for StopRule {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

/// Progress notifications for tests and tracing.
#[derive(Debug)]
pub enum SolverEvent<'a> {
    /// A coordinate step was applied to device `n`.
    Step { n: usize, eta: f64, state: &'a SolverState },
    /// An outer iteration finished; `candidates` were scanned and `selected` updated.
    Iteration { state: &'a SolverState, candidates: &'a [usize], selected: &'a [usize] },
}

/// f(γ) = log det Σ + tr(Σ⁻¹Σ̂) by Cholesky factorization of Σ(γ).
pub fn objective(problem: &DetectionProblem, gamma: &[f64]) -> Result<f64> {
    if gamma.len() != problem.n_devices() {
        return Err(invalid("gamma length does not match the device count"));
    }
    let sigma = problem.covariance(gamma);
    let (log_det, trace) = linalg::hpd_log_det_and_trace_solve(&sigma, &problem.sigma_hat)?;
    Ok(log_det + trace)
}

/// [∇f(γ)]_n = s_nᴴΣ⁻¹s_n − s_nᴴΣ⁻¹Σ̂Σ⁻¹s_n using the maintained inverse.
pub fn gradient_component(problem: &DetectionProblem, state: &mut SolverState, n: usize) -> f64 {
    let (a, q) = state.quadratic_forms(problem, n);
    state.grad_computations += 1;
    state.flops += gradient_flops(problem.l_phase2());
    a - q
}

/// P_lo^hi(x).
fn project(x: f64, lo: f64, hi: f64) -> f64 {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Nonnegative violation of the box-constrained first-order condition.
pub fn violation(gamma_n: f64, grad_n: f64) -> f64 {
    if gamma_n == 0.0 {
        project(-grad_n, 0.0, f64::INFINITY).abs()
    } else if gamma_n == 1.0 {
        (project(1.0 - grad_n, f64::NEG_INFINITY, 1.0) - 1.0).abs()
    } else {
        grad_n.abs()
    }
}

/// Fresh V(γ_n) stored into `state.violations[n]`.
pub(crate) fn refresh_violation(problem: &DetectionProblem, state: &mut SolverState, n: usize) -> f64 {
    let g = gradient_component(problem, state, n);
    let v = violation(state.gamma[n], g);
    state.violations[n] = v;
    v
}

/// Clips the unconstrained step so that γ_n + η stays in [0, 1].
pub fn clipped_step(gamma_n: f64, unconstrained: f64) -> f64 {
    unconstrained.max(-gamma_n).min(1.0 - gamma_n)
}

/// Exact minimization along coordinate `n`, followed by the rank-one
/// update of Σ⁻¹. Returns the step η actually taken.
pub fn coordinate_step(problem: &DetectionProblem, state: &mut SolverState, n: usize) -> f64 {
    let (a, q) = state.quadratic_forms(problem, n);
    state.coord_updates += 1;
    state.flops += update_flops(problem.l_phase2());

    if !(a > 0.0) {
        return 0.0;
    }
    let gamma_n = state.gamma[n];
    let eta = clipped_step(gamma_n, (q - a) / (a * a));
    if eta == 0.0 || !eta.is_finite() {
        return 0.0;
    }
    state.gamma[n] = if eta == -gamma_n {
        0.0
    } else if eta == 1.0 - gamma_n {
        1.0
    } else {
        gamma_n + eta
    };

    let denom = 1.0 + eta * a;
    if denom.abs() < RANK_ONE_GUARD {
        // Counted as the same update; the re-factorization is a numerical fallback.
        if state.refresh_inverse(problem).is_ok() {
            return eta;
        }
    }
    let u = std::mem::take(&mut state.u);
    rank_one_downdate(&mut state.sigma_inv, &u, eta / denom);
    state.u = u;
    eta
}

/// Hard decision: device n is declared active iff γ_n > θ.
pub fn threshold_activities(gamma: &[f64], theta: f64) -> Vec<bool> {
    gamma.iter().map(|&g| g > theta).collect()
}

/// Computes V for every coordinate (N gradient components).
pub(crate) fn full_violation_pass(problem: &DetectionProblem, state: &mut SolverState) -> f64 {
    let mut max = 0.0f64;
    for n in 0..problem.n_devices() {
        max = max.max(refresh_violation(problem, state, n));
    }
    max
}

/// Which Phase II solver to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Cd,
    ActiveSet,
    Kcd,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Cd => "cd",
            SolverKind::ActiveSet => "active-set",
            SolverKind::Kcd => "kcd",
        }
    }
}

impl std::str::FromStr for SolverKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" => Ok(SolverKind::Cd),
            "active-set" => Ok(SolverKind::ActiveSet),
            "kcd" => Ok(SolverKind::Kcd),
            other => Err(invalid(format!("unknown solver '{other}'"))),
        }
    }
}

/// How Active Set CD picks ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaRule {
    /// ω = ε: Active Set CD can then only stop by converging.
    MatchEpsilon,
    Absolute(f64),
    /// ω = factor · ‖V(0)‖∞ for each problem instance. Falls back to ε when
    /// V(0) vanishes, where the solver stops before ω is consulted.
    RelativeToInitial(f64),
}

impl OmegaRule {
    pub fn resolve(self, problem: &DetectionProblem, stop: &StopRule) -> f64 {
        match self {
            OmegaRule::MatchEpsilon => stop.epsilon,
            OmegaRule::Absolute(w) => w,
            OmegaRule::RelativeToInitial(f) => {
                let v0 = initial_max_violation(problem);
                if v0 > 0.0 {
                    f * v0
                } else {
                    stop.epsilon
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub kind: SolverKind,
    pub stop: StopRule,
    pub kcd: KcdParams,
    pub omega: OmegaRule,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            kind: SolverKind::Kcd,
            stop: StopRule::default(),
            kcd: KcdParams::default(),
            omega: OmegaRule::MatchEpsilon,
        }
    }
}

impl SolverParams {
    pub fn with_kind(mut self, kind: SolverKind) -> Self {
        self.kind = kind;
        self
    }
}

/// Runs the configured solver; `k_hat` is only used by K-CD.
pub fn solve(problem: &DetectionProblem, params: &SolverParams, k_hat: usize) -> Result<SolverReport> {
    match params.kind {
        SolverKind::Cd => solve_cd(problem, &params.stop),
        SolverKind::ActiveSet => solve_active_set_cd(problem, &params.stop, params.omega.resolve(problem, &params.stop)),
        SolverKind::Kcd => solve_kcd(problem, &params.stop, &params.kcd, k_hat.min(problem.n_devices())),
    }
}
