//! Seeded Monte Carlo sweeps and their result tables.
//!
//! Every grid point runs `trials` independent trials; trial `t` of grid
//! point `g` draws from `child_rng(mix_seed(master_seed, g), t)`, so output
//! does not depend on how trials are scheduled. Per-trial quantities are
//! averaged with equal weight. Trials whose error rates are undefined
//! (no active or no inactive device) are left out of the rate averages and
//! counted in `excluded`.
//!
//! CSV columns, in order:
//!
//! `mode, scheme, n_devices, n_antennas, n_active, l1, l2, sigma2, trials,
//! excluded, mdp, mdp_se, fap, fap_se, equal_error, equal_error_se,
//! mean_k_hat, e_k, mean_l2, mean_total_preamble, coord_updates,
//! grad_computations, flops, converged_fraction, out_of_table`
//!
//! Floats are written with 9 significant digits; undefined values are
//! left empty. Stored values are already rounded to that precision, so a
//! written table parses back to an identical table.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{solve, DetectionProblem, SolverKind, SolverParams, SolverReport};
use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate_count, estimation_error, sample_covariance};
use crate::metrics::{equal_error_rate, ErrorRates};
use crate::protocol::{run_grant_free, run_two_stage, LookupTable, TrialOutcome};
use crate::rng::{child_rng, mix_seed, stream, SimRng};
use crate::system::{
    generate_common_preamble, generate_phase1_signal, generate_phase2_signal, generate_preambles, sample_activity,
    SystemConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Phase I estimator sweep over K, M and L_I.
    Estimate,
    /// Phase II solver comparison at fixed L_II, with K̂ from a Phase I estimate.
    Detect,
    /// Two-stage protocol against the grant-free baseline.
    TwoStage,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Estimate => "estimate",
            Mode::Detect => "detect",
            Mode::TwoStage => "two-stage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub n_devices: usize,
    pub antennas: Vec<usize>,
    pub active: Vec<usize>,
    pub l1: Vec<usize>,
    /// Detect mode: Phase II lengths. Two-stage mode: grant-free lengths.
    pub l2: Vec<usize>,
    pub sigma2: f64,
    /// Detect mode: solvers to compare. Two-stage mode: the first entry is
    /// the two-stage detector.
    pub solvers: Vec<SolverKind>,
    pub params: SolverParams,
    pub table: Option<LookupTable>,
    pub trials: usize,
    pub master_seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trial count must be at least 1"));
        }
        if self.antennas.is_empty() || self.active.is_empty() || self.l1.is_empty() {
            return Err(invalid("antenna, active-count and L_I grids must be nonempty"));
        }
        if self.mode == Mode::Detect && (self.l2.is_empty() || self.solvers.is_empty()) {
            return Err(invalid("detect mode needs an L_II grid and at least one solver"));
        }
        if self.mode == Mode::TwoStage && self.table.is_none() {
            return Err(invalid("two-stage mode needs a lookup table"));
        }
        Ok(())
    }

    fn config(&self, m: usize, k: usize, l1: usize, l2: usize) -> SystemConfig {
        SystemConfig {
            n_devices: self.n_devices,
            n_antennas: m,
            n_active: k,
            l_phase1: l1,
            l_phase2: l2,
            sigma2: self.sigma2,
            master_seed: self.master_seed,
        }
    }
}

/// One output row: a grid point and scheme, aggregated over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: String,
    /// Solver name, or `two-stage-<solver>` / `grant-free-cd` in two-stage mode.
    pub scheme: String,
    pub n_devices: usize,
    pub n_antennas: usize,
    pub n_active: usize,
    pub l1: usize,
    pub l2: usize,
    pub sigma2: f64,
    pub trials: usize,
    pub excluded: usize,
    pub mdp: Option<f64>,
    pub mdp_se: Option<f64>,
    pub fap: Option<f64>,
    pub fap_se: Option<f64>,
    pub equal_error: Option<f64>,
    pub equal_error_se: Option<f64>,
    pub mean_k_hat: Option<f64>,
    pub e_k: Option<f64>,
    pub mean_l2: Option<f64>,
    pub mean_total_preamble: Option<f64>,
    pub coord_updates: Option<f64>,
    pub grad_computations: Option<f64>,
    pub flops: Option<f64>,
    pub converged_fraction: Option<f64>,
    pub out_of_table: usize,
}

const COLUMNS: [&str; 25] = [
    "mode",
    "scheme",
    "n_devices",
    "n_antennas",
    "n_active",
    "l1",
    "l2",
    "sigma2",
    "trials",
    "excluded",
    "mdp",
    "mdp_se",
    "fap",
    "fap_se",
    "equal_error",
    "equal_error_se",
    "mean_k_hat",
    "e_k",
    "mean_l2",
    "mean_total_preamble",
    "coord_updates",
    "grad_computations",
    "flops",
    "converged_fraction",
    "out_of_table",
];

/// Rounds to 9 significant digits, the precision used on disk.
pub fn quantize(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.8e}").parse().unwrap_or(x)
    } else {
        x
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.mode.clone(),
            self.scheme.clone(),
            self.n_devices.to_string(),
            self.n_antennas.to_string(),
            self.n_active.to_string(),
            self.l1.to_string(),
            self.l2.to_string(),
            fmt_float(self.sigma2),
            self.trials.to_string(),
            self.excluded.to_string(),
            fmt_opt(self.mdp),
            fmt_opt(self.mdp_se),
            fmt_opt(self.fap),
            fmt_opt(self.fap_se),
            fmt_opt(self.equal_error),
            fmt_opt(self.equal_error_se),
            fmt_opt(self.mean_k_hat),
            fmt_opt(self.e_k),
            fmt_opt(self.mean_l2),
            fmt_opt(self.mean_total_preamble),
            fmt_opt(self.coord_updates),
            fmt_opt(self.grad_computations),
            fmt_opt(self.flops),
            fmt_opt(self.converged_fraction),
            self.out_of_table.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS)?;
        for row in &self.rows {
            w.write_record(row.record())?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::ResultFormat(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != COLUMNS {
            return Err(Error::ResultFormat(format!("unexpected header {header:?}")));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rows)? + "\n")
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Csv => self.to_csv_string(),
            OutputFormat::Json => self.to_json_string(),
        }
    }

    pub fn write(&self, path: &Path, format: OutputFormat) -> Result<()> {
        let text = self.render(format)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    pub fn find(&self, scheme: &str, n_active: usize) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.n_active == n_active)
    }
}

/// What one trial contributes to a row.
#[derive(Debug, Clone, Default)]
struct TrialSample {
    rates: Option<ErrorRates>,
    k_hat: Option<f64>,
    e_k: Option<f64>,
    l2: Option<f64>,
    total_preamble: Option<f64>,
    report: Option<SolverReport>,
    out_of_table: bool,
}

impl TrialSample {
    fn from_outcome(outcome: &TrialOutcome) -> Self {
        Self {
            rates: equal_error_rate(&outcome.truth, &outcome.soft_scores).ok(),
            k_hat: outcome.estimate.map(|e| e.k_hat as f64),
            e_k: outcome.estimate.and_then(|e| estimation_error(outcome.k_true, e.k_hat_raw).ok()),
            l2: Some(outcome.l2_allocated as f64),
            total_preamble: Some(outcome.total_preamble as f64),
            report: Some(outcome.solver_report.clone()),
            out_of_table: outcome.out_of_table,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn binomial_se(p: Option<f64>, n: usize) -> Option<f64> {
    p.filter(|_| n > 0).map(|p| (p * (1.0 - p) / n as f64).max(0.0).sqrt())
}

fn aggregate(mode: Mode, scheme: &str, config: &SystemConfig, samples: &[TrialSample]) -> ResultRow {
    let rated: Vec<&ErrorRates> = samples.iter().filter_map(|s| s.rates.as_ref()).collect();
    let n_rated = rated.len();
    let mdp = mean(rated.iter().filter_map(|r| r.mdp));
    let fap = mean(rated.iter().filter_map(|r| r.fap));
    let eer = mean(rated.iter().filter_map(|r| r.equal_error));
    let reports: Vec<&SolverReport> = samples.iter().filter_map(|s| s.report.as_ref()).collect();
    let q = |x: Option<f64>| x.map(quantize);
    ResultRow {
        mode: mode.name().to_string(),
        scheme: scheme.to_string(),
        n_devices: config.n_devices,
        n_antennas: config.n_antennas,
        n_active: config.n_active,
        l1: config.l_phase1,
        l2: config.l_phase2,
        sigma2: quantize(config.sigma2),
        trials: samples.len(),
        excluded: if mode == Mode::Estimate { 0 } else { samples.len() - n_rated },
        mdp: q(mdp),
        mdp_se: q(binomial_se(mdp, n_rated)),
        fap: q(fap),
        fap_se: q(binomial_se(fap, n_rated)),
        equal_error: q(eer),
        equal_error_se: q(binomial_se(eer, n_rated)),
        mean_k_hat: q(mean(samples.iter().filter_map(|s| s.k_hat))),
        e_k: q(mean(samples.iter().filter_map(|s| s.e_k))),
        mean_l2: q(mean(samples.iter().filter_map(|s| s.l2))),
        mean_total_preamble: q(mean(samples.iter().filter_map(|s| s.total_preamble))),
        coord_updates: q(mean(reports.iter().map(|r| r.coord_updates as f64))),
        grad_computations: q(mean(reports.iter().map(|r| r.grad_computations as f64))),
        flops: q(mean(reports.iter().map(|r| r.flops as f64))),
        converged_fraction: q(mean(reports.iter().map(|r| if r.converged { 1.0 } else { 0.0 }))),
        out_of_table: samples.iter().filter(|s| s.out_of_table).count(),
    }
}

fn run_trials<T: Send>(trials: usize, seed: u64, f: impl Fn(&mut SimRng) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..trials as u64).into_par_iter().map(|t| f(&mut child_rng(seed, t))).collect()
}

/// Phase I only.
fn estimate_trial(config: &SystemConfig, rng: &mut SimRng) -> Result<TrialSample> {
    let trial_seed: u64 = rng.gen();
    let activity = sample_activity(config.n_devices, config.n_active, &mut child_rng(trial_seed, stream::ACTIVITY))?;
    let s = generate_common_preamble(config.l_phase1, &mut child_rng(trial_seed, stream::PHASE1_PREAMBLE));
    let y = generate_phase1_signal(config, &activity, &s, &mut child_rng(trial_seed, stream::PHASE1_SIGNAL))?;
    let est = estimate_count(&sample_covariance(&y), &s, config.sigma2, config.n_devices)?;
    Ok(TrialSample {
        k_hat: Some(est.k_hat_raw),
        e_k: estimation_error(config.n_active, est.k_hat_raw).ok(),
        ..TrialSample::default()
    })
}

/// Phase I estimate plus every requested solver on one shared Phase II problem.
fn detect_trial(
    config: &SystemConfig,
    solvers: &[SolverKind],
    params: &SolverParams,
    rng: &mut SimRng,
) -> Result<Vec<TrialSample>> {
    let trial_seed: u64 = rng.gen();
    let activity = sample_activity(config.n_devices, config.n_active, &mut child_rng(trial_seed, stream::ACTIVITY))?;
    let s = generate_common_preamble(config.l_phase1, &mut child_rng(trial_seed, stream::PHASE1_PREAMBLE));
    let y1 = generate_phase1_signal(config, &activity, &s, &mut child_rng(trial_seed, stream::PHASE1_SIGNAL))?;
    let est = estimate_count(&sample_covariance(&y1), &s, config.sigma2, config.n_devices)?;

    let preambles =
        generate_preambles(config.n_devices, config.l_phase2, &mut child_rng(trial_seed, stream::PHASE2_PREAMBLES));
    let y2 = generate_phase2_signal(config, &activity, &preambles, &mut child_rng(trial_seed, stream::PHASE2_SIGNAL))?;
    let problem = DetectionProblem::from_signal(preambles, &y2, config.sigma2)?;
    solvers
        .iter()
        .map(|&kind| {
            let report = solve(&problem, &params.with_kind(kind), est.k_hat)?;
            Ok(TrialSample {
                rates: equal_error_rate(&activity, &report.gamma).ok(),
                k_hat: Some(est.k_hat as f64),
                e_k: estimation_error(config.n_active, est.k_hat_raw).ok(),
                l2: Some(config.l_phase2 as f64),
                total_preamble: Some((config.l_phase1 + config.l_phase2) as f64),
                report: Some(report),
                out_of_table: false,
            })
        })
        .collect()
}

/// Runs every grid point of `spec`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut point = 0u64;
    let mut next_seed = || {
        point += 1;
        mix_seed(spec.master_seed, point)
    };
    for &m in &spec.antennas {
        for &k in &spec.active {
            for &l1 in &spec.l1 {
                match spec.mode {
                    Mode::Estimate => {
                        let config = spec.config(m, k, l1, 1);
                        config.validate()?;
                        let samples = run_trials(spec.trials, next_seed(), |rng| estimate_trial(&config, rng))?;
                        rows.push(aggregate(spec.mode, "estimator", &config, &samples));
                    }
                    Mode::Detect => {
                        for &l2 in &spec.l2 {
                            let config = spec.config(m, k, l1, l2);
                            config.validate()?;
                            let per_trial = run_trials(spec.trials, next_seed(), |rng| {
                                detect_trial(&config, &spec.solvers, &spec.params, rng)
                            })?;
                            for (i, kind) in spec.solvers.iter().enumerate() {
                                let samples: Vec<TrialSample> = per_trial.iter().map(|t| t[i].clone()).collect();
                                rows.push(aggregate(spec.mode, kind.name(), &config, &samples));
                            }
                        }
                    }
                    Mode::TwoStage => {
                        let table = spec.table.as_ref().ok_or_else(|| invalid("two-stage mode needs a lookup table"))?;
                        let kind = spec.solvers.first().copied().unwrap_or(SolverKind::Kcd);
                        let params = spec.params.with_kind(kind);
                        let config = spec.config(m, k, l1, table.min_l2());
                        config.validate()?;
                        let seed = next_seed();
                        let samples = run_trials(spec.trials, seed, |rng| {
                            Ok(TrialSample::from_outcome(&run_two_stage(&config, table, &params, rng)?))
                        })?;
                        let mut row = aggregate(spec.mode, &format!("two-stage-{}", kind.name()), &config, &samples);
                        row.l2 = 0;
                        rows.push(row);
                        for &l2 in &spec.l2 {
                            let config = spec.config(m, k, l1, l2);
                            // same trial streams as the two-stage row
                            let samples = run_trials(spec.trials, seed, |rng| {
                                Ok(TrialSample::from_outcome(&run_grant_free(&config, l2, &params, rng)?))
                            })?;
                            let mut row = aggregate(spec.mode, "grant-free-cd", &config, &samples);
                            row.l1 = 0;
                            rows.push(row);
                        }
                    }
                }
            }
        }
    }
    Ok(ResultTable { rows })
}
