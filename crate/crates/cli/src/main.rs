//! `twostage`: command-line front end for the activity-detection simulator.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use twostage::detector::{KcdParams, OmegaRule, SolverKind, SolverParams, StopRule};
use twostage::experiment::{run_experiment, ExperimentSpec, Mode, OutputFormat};
use twostage::protocol::{calibrate_table, LookupTable};
use twostage::rng::rng_from_seed;
use twostage::system::{normalized_noise_power, LinkBudget, SystemConfig};
use twostage::verify::run_oracle_suite;

#[derive(Parser, Debug)]
#[command(name = "twostage", version, about = "Two-stage device activity detection for massive random access")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a lookup table mapping active-device counts to Phase II lengths.
    Calibrate(CalibrateArgs),
    /// Phase I count-estimation sweep.
    Estimate(RunArgs),
    /// Compare detectors at fixed Phase II lengths.
    Detect(RunArgs),
    /// Two-stage protocol against the grant-free baseline.
    TwoStage(RunArgs),
    /// Run the brute-force and finite-difference verification suite.
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Number of devices N.
    #[arg(long, default_value_t = 200)]
    devices: usize,
    /// Base-station antennas M (single value or comma grid).
    #[arg(long, value_delimiter = ',', default_value = "16")]
    antennas: Vec<usize>,
    /// Active devices K (single value or comma grid).
    #[arg(long, value_delimiter = ',', default_value = "20")]
    active: Vec<usize>,
    /// Phase I preamble length (single value or comma grid).
    #[arg(long, value_delimiter = ',', default_value = "4")]
    l1: Vec<usize>,
    /// Normalized noise power; derived from the link budget when omitted.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Device distance in km for the link budget.
    #[arg(long, default_value_t = 1.0)]
    distance: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl ScenarioArgs {
    fn sigma2(&self) -> anyhow::Result<f64> {
        match self.sigma2 {
            Some(s) => Ok(s),
            None => Ok(normalized_noise_power(&LinkBudget::default().with_distance(self.distance))?),
        }
    }
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Stopping tolerance ε on the optimality violation.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = twostage::detector::DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    /// K-CD stall threshold α.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// K-CD stall limit D.
    #[arg(long, default_value_t = 2)]
    stall_limit: u32,
    /// Absolute Active Set threshold ω (defaults to ε).
    #[arg(long, conflicts_with = "omega_relative")]
    omega: Option<f64>,
    /// Active Set threshold as a fraction of the initial maximum violation.
    #[arg(long)]
    omega_relative: Option<f64>,
    /// Detectors to run (comma list of cd, active-set, kcd).
    #[arg(long, value_delimiter = ',')]
    solver: Vec<SolverKind>,
}

impl SolverArgs {
    fn params(&self) -> SolverParams {
        let omega = match (self.omega, self.omega_relative) {
            (Some(w), _) => OmegaRule::Absolute(w),
            (None, Some(f)) => OmegaRule::RelativeToInitial(f),
            (None, None) => OmegaRule::MatchEpsilon,
        };
        SolverParams {
            kind: SolverKind::Kcd,
            stop: StopRule { epsilon: self.epsilon, max_iterations: self.max_iterations },
            kcd: KcdParams { alpha: self.alpha, stall_limit: self.stall_limit },
            omega,
        }
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Phase II lengths (detect) or grant-free lengths (two-stage), comma grid.
    #[arg(long, value_delimiter = ',')]
    l2: Vec<usize>,
    /// Lookup table file for two-stage mode.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, default_value_t = twostage::detector::DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    /// Target mean equal-error rate.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Active-device counts to calibrate (comma list).
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40,50,60")]
    k_grid: Vec<usize>,
    /// Smallest candidate Phase II length.
    #[arg(long, default_value_t = 4)]
    l2_min: usize,
    /// Largest candidate Phase II length.
    #[arg(long, default_value_t = 80)]
    l2_max: usize,
    /// Table file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_mode(mode: Mode, args: RunArgs) -> anyhow::Result<()> {
    let table = match &args.table {
        Some(path) => {
            Some(LookupTable::read(path).with_context(|| format!("cannot load table {}", path.display()))?)
        }
        None if mode == Mode::TwoStage => bail!("two-stage mode needs --table"),
        None => None,
    };
    let solvers = match (&args.solver.solver[..], mode) {
        ([], Mode::TwoStage) => vec![SolverKind::Kcd],
        ([], _) => vec![SolverKind::Cd, SolverKind::ActiveSet, SolverKind::Kcd],
        (list, _) => list.to_vec(),
    };
    let l2 = match (&args.l2[..], mode) {
        ([], Mode::Detect) => vec![40],
        (list, _) => list.to_vec(),
    };
    let spec = ExperimentSpec {
        mode,
        n_devices: args.scenario.devices,
        antennas: args.scenario.antennas.clone(),
        active: args.scenario.active.clone(),
        l1: args.scenario.l1.clone(),
        l2,
        sigma2: args.scenario.sigma2()?,
        solvers,
        params: args.solver.params(),
        table,
        trials: args.scenario.trials,
        master_seed: args.scenario.seed,
    };
    let result = run_experiment(&spec)?;
    emit(&result.render(args.output.format.into())?, args.output.out.as_deref())
}

fn calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let s = &args.scenario;
    if args.l2_min == 0 || args.l2_min > args.l2_max {
        bail!("candidate range must satisfy 1 <= l2-min <= l2-max");
    }
    let antennas = match s.antennas[..] {
        [m] => m,
        _ => bail!("calibrate takes a single --antennas value"),
    };
    let base = SystemConfig {
        n_devices: s.devices,
        n_antennas: antennas,
        n_active: 0,
        l_phase1: 1,
        l_phase2: args.l2_min,
        sigma2: s.sigma2()?,
        master_seed: s.seed,
    };
    let candidates: Vec<usize> = (args.l2_min..=args.l2_max).collect();
    let stop = StopRule { epsilon: args.epsilon, max_iterations: args.max_iterations };
    let table =
        calibrate_table(&args.k_grid, &candidates, args.threshold, s.trials, &base, &stop, &mut rng_from_seed(s.seed))?;
    emit(&table.to_file_string(), args.out.as_deref())
}

fn oracle(args: OracleArgs) -> anyhow::Result<bool> {
    let checks = run_oracle_suite(args.seed)?;
    let text = match args.output.format {
        Format::Json => serde_json::to_string_pretty(&checks)? + "\n",
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["check", "passed", "worst", "tolerance"])?;
            for c in &checks {
                w.write_record([
                    c.name.clone(),
                    c.passed.to_string(),
                    format!("{:.8e}", c.worst),
                    format!("{:.8e}", c.tolerance),
                ])?;
            }
            String::from_utf8(w.into_inner()?)?
        }
    };
    emit(&text, args.output.out.as_deref())?;
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Estimate(a) => run_mode(Mode::Estimate, a),
        Command::Detect(a) => run_mode(Mode::Detect, a),
        Command::TwoStage(a) => run_mode(Mode::TwoStage, a),
        Command::Oracle(a) => match oracle(a) {
            Ok(true) => Ok(()),
            Ok(false) => Err(anyhow::anyhow!("verification suite reported failures")),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
