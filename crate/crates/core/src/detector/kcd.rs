use serde::{Deserialize, Serialize};

use super::{
    coordinate_step, full_violation_pass, refresh_violation, DetectionProblem, SolverEvent, SolverReport,
    SolverState, SolverStatus, StopRule,
};
use crate::error::{invalid, Result};

/// Coordinate-freezing parameters of K-CD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KcdParams {
    /// α: a computed violation below this counts toward freezing. Zero
    /// disables freezing.
    pub alpha: f64,
    /// D: a coordinate leaves the candidate set once its count exceeds this.
    pub stall_limit: u32,
}

impl Default for KcdParams {
    fn default() -> Self {
        Self { alpha: 0.01, stall_limit: 2 }
    }
}

/// K-CD: update only the `k_hat` most violating coordinates per iteration,
/// and stop computing gradients for coordinates whose violation has stayed
/// below α more than D times.
///
/// The stopping test ‖V‖∞ ≤ ε runs over the candidate set, whose
/// violations are always fresh; frozen coordinates are not re-examined. An
/// empty candidate set therefore terminates as converged.
pub fn solve_kcd(problem: &DetectionProblem, stop: &StopRule, params: &KcdParams, k_hat: usize) -> Result<SolverReport> {
    solve_kcd_observed(problem, stop, params, k_hat, &mut |_| {})
}

pub fn solve_kcd_observed(
    problem: &DetectionProblem,
    stop: &StopRule,
    params: &KcdParams,
    k_hat: usize,
    observer: &mut dyn FnMut(&SolverEvent),
) -> Result<SolverReport> {
    stop.validate()?;
    if !(params.alpha >= 0.0) {
        return Err(invalid("alpha must be nonnegative"));
    }
    let n_devices = problem.n_devices();
    if k_hat > n_devices {
        return Err(invalid(format!("k_hat = {k_hat} exceeds the device count {n_devices}")));
    }

    let mut state = SolverState::new(problem);
    full_violation_pass(problem, &mut state);
    if k_hat == 0 {
        let status = if state.max_violation() <= stop.epsilon {
            SolverStatus::Converged
        } else {
            SolverStatus::Stalled
        };
        return SolverReport::from_state(problem, &state, status);
    }
    count_stalls(&mut state, &(0..n_devices).collect::<Vec<_>>(), params.alpha);
    state.candidate_set = (0..n_devices).filter(|&n| state.stall_counts[n] <= params.stall_limit).collect();

    let status = loop {
        if candidate_max(&state) <= stop.epsilon {
            break SolverStatus::Converged;
        }
        if state.iteration >= stop.max_iterations {
            break SolverStatus::IterationCap;
        }
        state.iteration += 1;

        let selected = most_violating(&state.candidate_set, &state.violations, k_hat);
        for &n in &selected {
            let eta = coordinate_step(problem, &mut state, n);
            observer(&SolverEvent::Step { n, eta, state: &state });
        }

        let scanned = std::mem::take(&mut state.candidate_set);
        for &n in &scanned {
            refresh_violation(problem, &mut state, n);
        }
        count_stalls(&mut state, &scanned, params.alpha);
        state.candidate_set = scanned
            .iter()
            .copied()
            .filter(|&n| state.stall_counts[n] <= params.stall_limit)
            .collect();
        observer(&SolverEvent::Iteration { state: &state, candidates: &scanned, selected: &selected });
    };
    SolverReport::from_state(problem, &state, status)
}

fn candidate_max(state: &SolverState) -> f64 {
    state.candidate_set.iter().map(|&n| state.violations[n]).fold(0.0, f64::max)
}

fn count_stalls(state: &mut SolverState, computed: &[usize], alpha: f64) {
    for &n in computed {
        if state.violations[n] < alpha {
            state.stall_counts[n] += 1;
        }
    }
}

/// The min(|candidates|, k) candidates with the largest violation,
/// ties broken by ascending index.
pub(crate) fn most_violating(candidates: &[usize], violations: &[f64], k: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| violations[b].total_cmp(&violations[a]).then(a.cmp(&b)));
    order.truncate(k.min(candidates.len()));
    order
}
