use twostage::detector::{SolverKind, SolverParams, StopRule};
use twostage::experiment::{run_experiment, ExperimentSpec, Mode, ResultTable};
use twostage::protocol::{calibrate_table, LookupTable};
use twostage::rng::rng_from_seed;
use twostage::system::SystemConfig;
use twostage::verify::run_oracle_suite;

fn spec(mode: Mode) -> ExperimentSpec {
    ExperimentSpec {
        mode,
        n_devices: 60,
        antennas: vec![16],
        active: vec![6],
        l1: vec![4],
        l2: vec![16],
        sigma2: 0.5,
        solvers: vec![SolverKind::Cd, SolverKind::ActiveSet, SolverKind::Kcd],
        params: SolverParams::default(),
        table: None,
        trials: 20,
        master_seed: 17,
    }
}

#[test]
fn oracle_suite_passes() {
    for check in run_oracle_suite(5).unwrap() {
        assert!(check.passed, "{} worst {} > {}", check.name, check.worst, check.tolerance);
    }
}

#[test]
fn phase_one_estimate_is_unbiased() {
    let mut s = spec(Mode::Estimate);
    s.n_devices = 500;
    s.active = vec![50, 200];
    s.antennas = vec![32];
    s.trials = 2000;
    let t = run_experiment(&s).unwrap();
    for row in &t.rows {
        let k = row.n_active as f64;
        let mean = row.mean_k_hat.unwrap();
        // standard error of the mean is about k·E_K/sqrt(trials)
        let tol = 4.0 * k * row.e_k.unwrap() / (s.trials as f64).sqrt() * 1.3;
        assert!((mean - k).abs() <= tol, "K={k} mean {mean} tol {tol}");
    }
}

#[test]
fn detector_flop_ordering() {
    let t = run_experiment(&spec(Mode::Detect)).unwrap();
    let flops = |name: &str| t.find(name, 6).unwrap().flops.unwrap();
    assert!(flops("kcd") < flops("active-set"));
    assert!(flops("active-set") < flops("cd"));
    for row in &t.rows {
        assert!(row.equal_error.unwrap() < 0.1, "{} {:?}", row.scheme, row.equal_error);
        assert_eq!(row.converged_fraction, Some(1.0));
    }
}

#[test]
fn calibrated_table_drives_two_stage() {
    let base = SystemConfig {
        n_devices: 60,
        n_antennas: 16,
        n_active: 1,
        l_phase1: 4,
        l_phase2: 4,
        sigma2: 0.5,
        master_seed: 0,
    };
    let table = calibrate_table(&[4, 8, 12], &(4..=40).collect::<Vec<_>>(), 0.1, 40, &base, &StopRule::default(), &mut rng_from_seed(3))
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    table.write(&path).unwrap();
    let loaded = LookupTable::read(&path).unwrap();
    assert_eq!(loaded, table);

    let mut s = spec(Mode::TwoStage);
    s.active = vec![4, 12];
    s.l2 = vec![table.lookup_l2(4).unwrap()];
    s.solvers = vec![SolverKind::Kcd];
    s.table = Some(loaded);
    s.trials = 60;
    let t = run_experiment(&s).unwrap();
    let two12 = t.find("two-stage-kcd", 12).unwrap();
    let free12 = t.find("grant-free-cd", 12).unwrap();
    assert!(two12.mean_l2.unwrap() > free12.mean_l2.unwrap());
    assert!(two12.equal_error.unwrap() < free12.equal_error.unwrap());
    assert!((two12.mean_total_preamble.unwrap() - two12.mean_l2.unwrap() - 4.0).abs() < 1e-6);

    let csv = t.to_csv_string().unwrap();
    assert_eq!(ResultTable::from_csv_str(&csv).unwrap(), t);
}
