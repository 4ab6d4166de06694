use super::{
    coordinate_step, full_violation_pass, DetectionProblem, SolverEvent, SolverReport, SolverState, SolverStatus,
    StopRule,
};
use crate::error::Result;

/// Cyclic coordinate descent: sweep every coordinate, then recompute the
/// full violation vector and stop once ‖V‖∞ ≤ ε.
pub fn solve_cd(problem: &DetectionProblem, stop: &StopRule) -> Result<SolverReport> {
    solve_cd_observed(problem, stop, &mut |_| {})
}

pub fn solve_cd_observed(
    problem: &DetectionProblem,
    stop: &StopRule,
    observer: &mut dyn FnMut(&SolverEvent),
) -> Result<SolverReport> {
    stop.validate()?;
    let mut state = SolverState::new(problem);
    let status = run(problem, &mut state, stop, observer);
    SolverReport::from_state(problem, &state, status)
}

pub(super) fn run(
    problem: &DetectionProblem,
    state: &mut SolverState,
    stop: &StopRule,
    observer: &mut dyn FnMut(&SolverEvent),
) -> SolverStatus {
    let n_devices = problem.n_devices();
    let all: Vec<usize> = (0..n_devices).collect();
    let mut max_v = full_violation_pass(problem, state);
    loop {
        if max_v <= stop.epsilon {
            return SolverStatus::Converged;
        }
        if state.iteration >= stop.max_iterations {
            return SolverStatus::IterationCap;
        }
        state.iteration += 1;
        for n in 0..n_devices {
            let eta = coordinate_step(problem, state, n);
            observer(&SolverEvent::Step { n, eta, state });
        }
        max_v = full_violation_pass(problem, state);
        observer(&SolverEvent::Iteration { state, candidates: &all, selected: &all });
    }
}
