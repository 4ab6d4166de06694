//! The two-stage protocol: Phase I count estimate, table lookup of the
//! Phase II preamble length, Phase II detection. Also the grant-free
//! baseline and the Monte Carlo calibration of lookup tables.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{solve, DetectionProblem, SolverKind, SolverParams, SolverReport, StopRule};
use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate_count, sample_covariance, CountEstimate};
use crate::metrics::equal_error_rate;
use crate::rng::{child_rng, mix_seed, stream, SimRng};
use crate::system::{
    generate_common_preamble, generate_phase1_signal, generate_phase2_signal, generate_preambles, sample_activity,
    ActivityPattern, SystemConfig,
};

/// Maps an estimated active count to a Phase II preamble length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTable {
    entries: Vec<(usize, usize)>,
    /// Target equal-error rate the table was built for.
    pub threshold: f64,
    pub m_antennas: usize,
    pub n_devices: usize,
}

impl LookupTable {
    pub fn new(entries: Vec<(usize, usize)>, threshold: f64, m_antennas: usize, n_devices: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::TableFormat("table has no entries".into()));
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::TableFormat(format!("K values must increase: {} then {}", w[0].0, w[1].0)));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::TableFormat(format!(
                    "L2 values must not decrease: K={} has {}, K={} has {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        if entries.iter().any(|&(k, l2)| k == 0 || l2 == 0) {
            return Err(Error::TableFormat("K and L2 entries must be positive".into()));
        }
        Ok(Self { entries, threshold, m_antennas, n_devices })
    }

    /// K from 10 to 300 in steps of 10, built for an equal-error rate of
    /// 10⁻² at M = 32, N = 1000.
    pub fn reference() -> Self {
        const L2: [usize; 30] = [
            15, 25, 35, 45, 55, 65, 75, 76, 77, 78, 80, 90, 100, 110, 120, 130, 140, 150, 160, 170, 180, 190, 200,
            210, 220, 230, 240, 250, 260, 270,
        ];
        let entries = L2.iter().enumerate().map(|(i, &l2)| (10 * (i + 1), l2)).collect();
        Self::new(entries, 1e-2, 32, 1000).expect("reference table is well formed")
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn max_k(&self) -> usize {
        self.entries.last().map(|e| e.0).unwrap_or(0)
    }

    pub fn min_l2(&self) -> usize {
        self.entries[0].1
    }

    /// Preamble length for `k_hat`, rounding up to the next tabulated count.
    pub fn lookup_l2(&self, k_hat: usize) -> Result<usize> {
        let idx = self.entries.partition_point(|&(k, _)| k < k_hat);
        self.entries
            .get(idx)
            .map(|&(_, l2)| l2)
            .ok_or(Error::OutOfTable { k_hat, max_k: self.max_k() })
    }

    /// Renders the table file: a `# threshold=… M=… N=…` line, then `K,L2` rows.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("# threshold={} M={} N={}\n", self.threshold, self.m_antennas, self.n_devices);
        for &(k, l2) in &self.entries {
            let _ = writeln!(out, "{k},{l2}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut threshold = None;
        let mut m = None;
        let mut n = None;
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.eq_ignore_ascii_case("k,l2") {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                for field in meta.split_whitespace() {
                    let (key, value) = field
                        .split_once('=')
                        .ok_or_else(|| Error::TableFormat(format!("line {}: bad header field '{field}'", lineno + 1)))?;
                    let bad = || Error::TableFormat(format!("line {}: bad value for {key}", lineno + 1));
                    match key {
                        "threshold" => threshold = Some(value.parse::<f64>().map_err(|_| bad())?),
                        "M" => m = Some(value.parse::<usize>().map_err(|_| bad())?),
                        "N" => n = Some(value.parse::<usize>().map_err(|_| bad())?),
                        _ => {}
                    }
                }
                continue;
            }
            let (k, l2) = line
                .split_once(',')
                .ok_or_else(|| Error::TableFormat(format!("line {}: expected 'K,L2'", lineno + 1)))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::TableFormat(format!("line {}: '{v}' is not a count", lineno + 1)))
            };
            entries.push((parse(k)?, parse(l2)?));
        }
        let missing = |what: &str| Error::TableFormat(format!("header is missing {what}"));
        Self::new(
            entries,
            threshold.ok_or_else(|| missing("threshold"))?,
            m.ok_or_else(|| missing("M"))?,
            n.ok_or_else(|| missing("N"))?,
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }
}

/// Everything one protocol trial produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub k_true: usize,
    /// Phase I estimate; absent for the grant-free baseline.
    pub estimate: Option<CountEstimate>,
    pub l1: usize,
    pub l2_allocated: usize,
    /// L = L_I + L_II.
    pub total_preamble: usize,
    /// The estimate exceeded the table and was clamped to its last row.
    pub out_of_table: bool,
    pub truth: ActivityPattern,
    pub soft_scores: Vec<f64>,
    pub solver_report: SolverReport,
}

impl TrialOutcome {
    pub fn k_hat(&self) -> Option<usize> {
        self.estimate.map(|e| e.k_hat)
    }
}

/// Activity and Phase II detection shared by both protocols.
fn detect_phase2(
    config: &SystemConfig,
    activity: &ActivityPattern,
    l2: usize,
    trial_seed: u64,
    params: &SolverParams,
    k_hat: usize,
) -> Result<SolverReport> {
    let preambles = generate_preambles(config.n_devices, l2, &mut child_rng(trial_seed, stream::PHASE2_PREAMBLES));
    let signal = generate_phase2_signal(config, activity, &preambles, &mut child_rng(trial_seed, stream::PHASE2_SIGNAL))?;
    let problem = DetectionProblem::from_signal(preambles, &signal, config.sigma2)?;
    solve(&problem, params, k_hat)
}

/// One slot of the two-stage protocol.
///
/// Draws one seed from `rng` and derives independent streams from it for
/// the activity, Phase I and Phase II, so the Phase II channels are
/// independent of the Phase I channels. An estimate of zero allocates the
/// shortest tabulated length; an estimate beyond the table uses the last
/// row and sets `out_of_table`.
pub fn run_two_stage(
    config: &SystemConfig,
    table: &LookupTable,
    params: &SolverParams,
    rng: &mut SimRng,
) -> Result<TrialOutcome> {
    config.validate()?;
    let trial_seed: u64 = rng.gen();
    let activity = sample_activity(config.n_devices, config.n_active, &mut child_rng(trial_seed, stream::ACTIVITY))?;

    let s = generate_common_preamble(config.l_phase1, &mut child_rng(trial_seed, stream::PHASE1_PREAMBLE));
    let y1 = generate_phase1_signal(config, &activity, &s, &mut child_rng(trial_seed, stream::PHASE1_SIGNAL))?;
    let estimate = estimate_count(&sample_covariance(&y1), &s, config.sigma2, config.n_devices)?;

    let (l2, out_of_table) = match table.lookup_l2(estimate.k_hat) {
        Ok(l2) => (l2, false),
        Err(Error::OutOfTable { .. }) => (table.lookup_l2(table.max_k())?, true),
        Err(e) => return Err(e),
    };
    let report = detect_phase2(config, &activity, l2, trial_seed, params, estimate.k_hat)?;
    Ok(TrialOutcome {
        k_true: config.n_active,
        estimate: Some(estimate),
        l1: config.l_phase1,
        l2_allocated: l2,
        total_preamble: config.l_phase1 + l2,
        out_of_table,
        truth: activity,
        soft_scores: report.gamma.clone(),
        solver_report: report,
    })
}

/// One slot of the grant-free baseline: fixed `l2_fixed`, no Phase I, CD detector.
///
/// Consumes `rng` exactly like [`run_two_stage`], so both protocols see the
/// same activity and Phase II realization for the same generator state.
pub fn run_grant_free(
    config: &SystemConfig,
    l2_fixed: usize,
    params: &SolverParams,
    rng: &mut SimRng,
) -> Result<TrialOutcome> {
    config.validate()?;
    if l2_fixed == 0 {
        return Err(invalid("fixed preamble length must be positive"));
    }
    let trial_seed: u64 = rng.gen();
    let activity = sample_activity(config.n_devices, config.n_active, &mut child_rng(trial_seed, stream::ACTIVITY))?;
    let cd = params.with_kind(SolverKind::Cd);
    let report = detect_phase2(config, &activity, l2_fixed, trial_seed, &cd, config.n_active)?;
    Ok(TrialOutcome {
        k_true: config.n_active,
        estimate: None,
        l1: 0,
        l2_allocated: l2_fixed,
        total_preamble: l2_fixed,
        out_of_table: false,
        truth: activity,
        soft_scores: report.gamma.clone(),
        solver_report: report,
    })
}

/// Mean per-trial equal-error rate of CD at a fixed preamble length.
///
/// Trial `t` uses the generator `child_rng(seed, t)` regardless of `l2`, so
/// different lengths are compared on common random numbers.
pub fn mean_equal_error(config: &SystemConfig, l2: usize, stop: &StopRule, trials: usize, seed: u64) -> Result<f64> {
    let params = SolverParams { stop: *stop, ..SolverParams::default() }.with_kind(SolverKind::Cd);
    let errors = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let outcome = run_grant_free(config, l2, &params, &mut child_rng(seed, t))?;
            Ok(equal_error_rate(&outcome.truth, &outcome.soft_scores)?.equal_error.unwrap_or(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / trials.max(1) as f64)
}

/// Builds a lookup table by Monte Carlo simulation with CD as the reference detector.
///
/// For each K the search returns the shortest candidate length whose mean
/// equal-error rate over `trials` trials is at most `threshold`. The search
/// is a bisection over the sorted candidates, which relies on the error
/// rate falling as the preamble grows, and starts at the previous K's
/// result so the lengths come out nondecreasing.
pub fn calibrate_table(
    k_grid: &[usize],
    l2_candidates: &[usize],
    threshold: f64,
    trials: usize,
    base_config: &SystemConfig,
    stop: &StopRule,
    rng: &mut SimRng,
) -> Result<LookupTable> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(invalid("threshold must lie in (0, 1]"));
    }
    if k_grid.is_empty() || k_grid.windows(2).any(|w| w[1] <= w[0]) || k_grid[0] == 0 {
        return Err(invalid("k grid must be nonempty, positive and strictly increasing"));
    }
    if trials == 0 {
        return Err(invalid("at least one trial is required"));
    }
    let mut candidates = l2_candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() || candidates[0] == 0 {
        return Err(invalid("candidate lengths must be nonempty and positive"));
    }
    let base_seed: u64 = rng.gen();

    let mut entries = Vec::with_capacity(k_grid.len());
    let mut lo = 0usize;
    for &k in k_grid {
        let config = SystemConfig { n_active: k, ..base_config.clone() };
        config.validate()?;
        let seed = mix_seed(base_seed, k as u64);
        let meets = |idx: usize| -> Result<bool> {
            Ok(mean_equal_error(&config, candidates[idx], stop, trials, seed)? <= threshold)
        };
        let mut hi = candidates.len() - 1;
        if !meets(hi)? {
            return Err(Error::CalibrationFailure { k, threshold });
        }
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if meets(mid)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        entries.push((k, candidates[lo]));
    }
    LookupTable::new(entries, threshold, base_config.n_antennas, base_config.n_devices)
}
