use super::{
    coordinate_step, full_violation_pass, gradient_component, violation, DetectionProblem, SolverEvent,
    SolverReport, SolverState, SolverStatus, StopRule,
};
use crate::error::{invalid, Result};

/// Active Set CD: every iteration computes the full violation vector and
/// updates, in ascending index order, only coordinates with V(γ_n) ≥ ω.
///
/// If no coordinate reaches ω while ‖V‖∞ > ε the solver stops with
/// [`SolverStatus::Stalled`].
pub fn solve_active_set_cd(problem: &DetectionProblem, stop: &StopRule, omega: f64) -> Result<SolverReport> {
    solve_active_set_cd_observed(problem, stop, omega, &mut |_| {})
}

pub fn solve_active_set_cd_observed(
    problem: &DetectionProblem,
    stop: &StopRule,
    omega: f64,
    observer: &mut dyn FnMut(&SolverEvent),
) -> Result<SolverReport> {
    stop.validate()?;
    if !(omega > 0.0) {
        return Err(invalid("omega must be positive"));
    }
    let mut state = SolverState::new(problem);
    let all: Vec<usize> = (0..problem.n_devices()).collect();
    let mut max_v = full_violation_pass(problem, &mut state);
    let status = loop {
        if max_v <= stop.epsilon {
            break SolverStatus::Converged;
        }
        if state.iteration >= stop.max_iterations {
            break SolverStatus::IterationCap;
        }
        let selected: Vec<usize> = all.iter().copied().filter(|&n| state.violations[n] >= omega).collect();
        if selected.is_empty() {
            break SolverStatus::Stalled;
        }
        state.iteration += 1;
        for &n in &selected {
            let eta = coordinate_step(problem, &mut state, n);
            observer(&SolverEvent::Step { n, eta, state: &state });
        }
        max_v = full_violation_pass(problem, &mut state);
        observer(&SolverEvent::Iteration { state: &state, candidates: &all, selected: &selected });
    };
    SolverReport::from_state(problem, &state, status)
}

/// ‖V(0)‖∞, the largest violation at the all-zero starting point.
///
/// Uses its own scratch state, so no solver counters are touched.
pub fn initial_max_violation(problem: &DetectionProblem) -> f64 {
    let mut state = SolverState::new(problem);
    (0..problem.n_devices())
        .map(|n| violation(0.0, gradient_component(problem, &mut state, n)))
        .fold(0.0, f64::max)
}
