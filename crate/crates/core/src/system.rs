//! Scenario parameters and signal generation for both protocol phases.
//!
//! Signals are in the power-controlled, normalized model: every active
//! device reaches the base station through a unit-variance Rayleigh channel
//! per antenna and the link budget collapses into one normalized noise
//! power σ².

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{complex_gaussian, rng_from_seed, SimRng};
use crate::{CMatrix, C64};

/// Physical link parameters that collapse into the normalized noise power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub bandwidth_hz: f64,
    pub distance_km: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db_per_decade: f64,
}

impl Default for LinkBudget {
    /// 23 dBm devices at 1 km, −169 dBm/Hz noise over 10 MHz, 128.1 + 37.6·log10(d) path loss.
    fn default() -> Self {
        Self {
            tx_power_dbm: 23.0,
            noise_psd_dbm_per_hz: -169.0,
            bandwidth_hz: 10e6,
            distance_km: 1.0,
            pathloss_intercept_db: 128.1,
            pathloss_slope_db_per_decade: 37.6,
        }
    }
}

impl LinkBudget {
    pub fn with_distance(mut self, distance_km: f64) -> Self {
        self.distance_km = distance_km;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0) {
            return Err(invalid("bandwidth must be positive"));
        }
        if !(self.distance_km > 0.0) {
            return Err(invalid("distance must be positive"));
        }
        Ok(())
    }

    pub fn pathloss_db(&self) -> f64 {
        self.pathloss_intercept_db + self.pathloss_slope_db_per_decade * self.distance_km.log10()
    }

    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_psd_dbm_per_hz + 10.0 * self.bandwidth_hz.log10()
    }

    /// Received power after power control, β, in dBm.
    pub fn received_power_dbm(&self) -> f64 {
        self.tx_power_dbm - self.pathloss_db()
    }
}

/// σ² = noise power / β in linear scale.
pub fn normalized_noise_power(budget: &LinkBudget) -> Result<f64> {
    budget.validate()?;
    Ok(db_to_linear(budget.noise_power_dbm() - budget.received_power_dbm()))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// N, the number of potential devices.
    pub n_devices: usize,
    /// M, base-station antennas.
    pub n_antennas: usize,
    /// K, devices active in the slot.
    pub n_active: usize,
    /// L_I, Phase I preamble length in symbols.
    pub l_phase1: usize,
    /// L_II, Phase II preamble length in symbols.
    pub l_phase2: usize,
    /// Normalized noise power, linear scale.
    pub sigma2: f64,
    pub master_seed: u64,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 || self.n_antennas == 0 || self.l_phase1 == 0 || self.l_phase2 == 0 {
            return Err(invalid("device count, antenna count and preamble lengths must be positive"));
        }
        if self.n_active > self.n_devices {
            return Err(invalid(format!(
                "n_active = {} exceeds n_devices = {}",
                self.n_active, self.n_devices
            )));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(invalid("sigma2 must be positive and finite"));
        }
        Ok(())
    }

    /// L = L_I + L_II.
    pub fn total_preamble(&self) -> usize {
        self.l_phase1 + self.l_phase2
    }
}

/// Ground-truth activity: exactly `n_active` entries set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityPattern {
    active: Vec<bool>,
}

impl ActivityPattern {
    pub fn from_indices(n_devices: usize, indices: &[usize]) -> Result<Self> {
        let mut active = vec![false; n_devices];
        for &i in indices {
            if i >= n_devices {
                return Err(invalid(format!("device index {i} out of range")));
            }
            active[i] = true;
        }
        Ok(Self { active })
    }

    pub fn from_flags(active: Vec<bool>) -> Self {
        Self { active }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn is_active(&self, n: usize) -> bool {
        self.active[n]
    }

    pub fn flags(&self) -> &[bool] {
        &self.active
    }

    pub fn active_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i)
    }

    /// γ as a 0/1 real vector.
    pub fn gamma(&self) -> Vec<f64> {
        self.active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect()
    }
}

/// Uniformly random size-`n_active` subset of the devices.
pub fn sample_activity(n_devices: usize, n_active: usize, rng: &mut SimRng) -> Result<ActivityPattern> {
    if n_active > n_devices {
        return Err(invalid(format!("n_active = {n_active} exceeds n_devices = {n_devices}")));
    }
    let mut active = vec![false; n_devices];
    for i in index::sample(rng, n_devices, n_active) {
        active[i] = true;
    }
    Ok(ActivityPattern { active })
}

/// Received block: rows are symbols, columns are antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub y: CMatrix,
}

impl ReceivedSignal {
    pub fn symbols(&self) -> usize {
        self.y.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.y.ncols()
    }
}

/// i.i.d. CN(0, 1) vector of length `len`.
pub fn generate_common_preamble(len: usize, rng: &mut SimRng) -> Vec<C64> {
    (0..len).map(|_| complex_gaussian(rng, 1.0)).collect()
}

/// Preamble matrix with i.i.d. CN(0, 1) entries, one column per device.
///
/// Each device draws its column from its own sub-stream seeded from `rng`,
/// so calling this with the same generator state and a shorter length
/// returns the leading rows of the longer matrix.
pub fn generate_preambles(n_devices: usize, l_phase2: usize, rng: &mut SimRng) -> CMatrix {
    let device_seeds: Vec<u64> = (0..n_devices).map(|_| rng.gen()).collect();
    let mut s = CMatrix::zeros(l_phase2, n_devices);
    for (n, &seed) in device_seeds.iter().enumerate() {
        let mut dev = rng_from_seed(seed);
        for l in 0..l_phase2 {
            s[(l, n)] = complex_gaussian(&mut dev, 1.0);
        }
    }
    s
}

fn check_activity(config: &SystemConfig, activity: &ActivityPattern) -> Result<()> {
    config.validate()?;
    if activity.len() != config.n_devices {
        return Err(invalid(format!(
            "activity has {} entries but config has {} devices",
            activity.len(),
            config.n_devices
        )));
    }
    Ok(())
}

fn noise(rows: usize, cols: usize, sigma2: f64, rng: &mut SimRng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(rng, sigma2))
}

/// Phase I: Y = s · (Σ_n γ_n h_nᵀ) + Z, size L_I × M.
///
/// Channels are drawn for the active devices only, in ascending index order,
/// followed by the noise.
pub fn generate_phase1_signal(
    config: &SystemConfig,
    activity: &ActivityPattern,
    s: &[C64],
    rng: &mut SimRng,
) -> Result<ReceivedSignal> {
    check_activity(config, activity)?;
    if s.len() != config.l_phase1 {
        return Err(invalid(format!(
            "common preamble has length {} but l_phase1 = {}",
            s.len(),
            config.l_phase1
        )));
    }
    let m = config.n_antennas;
    let mut aggregate = vec![C64::new(0.0, 0.0); m];
    for _ in activity.active_indices() {
        for a in aggregate.iter_mut() {
            *a += complex_gaussian(rng, 1.0);
        }
    }
    let mut y = noise(s.len(), m, config.sigma2, rng);
    for (j, g) in aggregate.iter().enumerate() {
        for (l, sl) in s.iter().enumerate() {
            y[(l, j)] += sl * g;
        }
    }
    Ok(ReceivedSignal { y })
}

/// Phase II: Y = S γ^{1/2} H + Z, size L × M where L is the row count of `preambles`.
pub fn generate_phase2_signal(
    config: &SystemConfig,
    activity: &ActivityPattern,
    preambles: &CMatrix,
    rng: &mut SimRng,
) -> Result<ReceivedSignal> {
    check_activity(config, activity)?;
    if preambles.ncols() != config.n_devices || preambles.nrows() == 0 {
        return Err(invalid(format!(
            "preamble matrix is {}x{}, expected L x {}",
            preambles.nrows(),
            preambles.ncols(),
            config.n_devices
        )));
    }
    let l = preambles.nrows();
    let m = config.n_antennas;
    let active: Vec<usize> = activity.active_indices().collect();
    let h = CMatrix::from_fn(active.len(), m, |_, _| complex_gaussian(rng, 1.0));
    let mut y = noise(l, m, config.sigma2, rng);
    for (row, &n) in active.iter().enumerate() {
        let s_n = preambles.column(n);
        for j in 0..m {
            let hj = h[(row, j)];
            for i in 0..l {
                y[(i, j)] += s_n[i] * hj;
            }
        }
    }
    Ok(ReceivedSignal { y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn config(n: usize, m: usize, k: usize, l1: usize, l2: usize, sigma2: f64) -> SystemConfig {
        SystemConfig {
            n_devices: n,
            n_antennas: m,
            n_active: k,
            l_phase1: l1,
            l_phase2: l2,
            sigma2,
            master_seed: 0,
        }
    }

    #[test]
    fn identity_link_budget_gives_unit_noise_power() {
        // noise power = -169 + 70 = -99 dBm; zero path loss; tx power equal to noise power.
        let budget = LinkBudget {
            tx_power_dbm: -99.0,
            noise_psd_dbm_per_hz: -169.0,
            bandwidth_hz: 1e7,
            distance_km: 1.0,
            pathloss_intercept_db: 0.0,
            pathloss_slope_db_per_decade: 0.0,
        };
        assert!((normalized_noise_power(&budget).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_link_budget_values() {
        // -99 dBm noise, beta = 23 - 128.1 = -105.1 dBm -> 10^(0.61)
        let s1 = normalized_noise_power(&LinkBudget::default()).unwrap();
        assert!((s1 - 10f64.powf(0.61)).abs() < 1e-12);
        assert!((s1 - 4.07).abs() < 0.01);
        // 100 m: path loss 90.5 dB, beta = -67.5 dBm -> 10^(-3.15)
        let s2 = normalized_noise_power(&LinkBudget::default().with_distance(0.1)).unwrap();
        assert!((s2 - 10f64.powf(-3.15)).abs() < 1e-15);
        assert!((s2 - 7.08e-4).abs() < 1e-6);
    }

    #[test]
    fn noise_power_monotonicity() {
        let base = LinkBudget::default();
        let mut prev = 0.0;
        for d in [0.05, 0.1, 0.5, 1.0, 2.0] {
            let v = normalized_noise_power(&base.with_distance(d)).unwrap();
            assert!(v > prev);
            prev = v;
        }
        let loud = LinkBudget { tx_power_dbm: 30.0, ..base };
        assert!(normalized_noise_power(&loud).unwrap() < normalized_noise_power(&base).unwrap());
    }

    #[test]
    fn invalid_link_budget() {
        let b = LinkBudget { bandwidth_hz: 0.0, ..LinkBudget::default() };
        assert!(normalized_noise_power(&b).is_err());
        let b = LinkBudget::default().with_distance(-1.0);
        assert!(normalized_noise_power(&b).is_err());
    }

    #[test]
    fn activity_edge_cases() {
        let mut rng = rng_from_seed(1);
        assert_eq!(sample_activity(5, 0, &mut rng).unwrap().gamma(), vec![0.0; 5]);
        assert_eq!(sample_activity(5, 5, &mut rng).unwrap().gamma(), vec![1.0; 5]);
        let a = sample_activity(1000, 100, &mut rng_from_seed(7)).unwrap();
        assert_eq!(a.n_active(), 100);
        assert_eq!(a, sample_activity(1000, 100, &mut rng_from_seed(7)).unwrap());
        assert!(sample_activity(5, 6, &mut rng).is_err());
    }

    #[test]
    fn preamble_shapes_and_determinism() {
        let s = generate_preambles(1, 1, &mut rng_from_seed(0));
        assert_eq!(s.shape(), (1, 1));
        let a = generate_preambles(1000, 100, &mut rng_from_seed(3));
        let b = generate_preambles(1000, 100, &mut rng_from_seed(3));
        assert_eq!(a, b);
        let short = generate_preambles(1000, 40, &mut rng_from_seed(3));
        assert_eq!(short, a.rows(0, 40).into_owned());
    }

    #[test]
    fn preamble_column_energy() {
        // E||s_n||^2 = L
        let l = 20;
        let s = generate_preambles(10_000, l, &mut rng_from_seed(5));
        let mean: f64 = s.column_iter().map(|c| c.norm_squared()).sum::<f64>() / 10_000.0;
        assert!((mean / l as f64 - 1.0).abs() < 0.03, "mean column energy {mean}");
    }

    #[test]
    fn phase1_noiseless_cases() {
        let cfg = config(10, 4, 0, 3, 5, 1e-300);
        let mut rng = rng_from_seed(2);
        let s = generate_common_preamble(3, &mut rng);
        let none = ActivityPattern::from_indices(10, &[]).unwrap();
        let y = generate_phase1_signal(&cfg, &none, &s, &mut rng).unwrap();
        assert_eq!(y.y.shape(), (3, 4));
        assert!(y.y.norm() < 1e-100);

        let one = ActivityPattern::from_indices(10, &[4]).unwrap();
        let y = generate_phase1_signal(&config(10, 4, 1, 3, 5, 1e-300), &one, &s, &mut rng).unwrap();
        // rank one: every column is a multiple of s
        let sv = CMatrix::from_column_slice(3, 1, &s);
        for col in y.y.column_iter() {
            let coef = crate::linalg::dot_conj(&s, col.as_slice()) / sv.norm_squared();
            let resid = col - &sv * coef;
            assert!(resid.norm() < 1e-10 * col.norm());
        }
    }

    #[test]
    fn phase1_entry_variance() {
        // Var(Y_lm) = K |s_l|^2 + sigma^2
        let k = 3;
        let sigma2 = 0.5;
        let cfg = config(8, 2, k, 4, 4, sigma2);
        let act = ActivityPattern::from_indices(8, &[0, 3, 6]).unwrap();
        let mut rng = rng_from_seed(9);
        let s = generate_common_preamble(4, &mut rng);
        let trials = 10_000;
        let mut power = CMatrix::zeros(4, 2);
        for _ in 0..trials {
            let y = generate_phase1_signal(&cfg, &act, &s, &mut rng).unwrap();
            for (p, v) in power.iter_mut().zip(y.y.iter()) {
                *p += C64::new(v.norm_sqr(), 0.0);
            }
        }
        for l in 0..4 {
            let expected = k as f64 * s[l].norm_sqr() + sigma2;
            for m in 0..2 {
                let got = power[(l, m)].re / trials as f64;
                assert!((got / expected - 1.0).abs() < 0.05, "entry ({l},{m}): {got} vs {expected}");
            }
        }
    }

    #[test]
    fn phase1_covariance_converges() {
        // (1/M) Y Y^H over M * trials >= 1e4 columns approaches K s s^H + sigma^2 I
        let (k, sigma2, l, m) = (5, 0.8, 4, 20);
        let cfg = config(30, m, k, l, 4, sigma2);
        let act = ActivityPattern::from_indices(30, &[1, 2, 3, 10, 20]).unwrap();
        let mut rng = rng_from_seed(10);
        let s = generate_common_preamble(l, &mut rng);
        let trials = 500;
        let mut acc = CMatrix::zeros(l, l);
        for _ in 0..trials {
            let y = generate_phase1_signal(&cfg, &act, &s, &mut rng).unwrap();
            acc += &y.y * y.y.adjoint();
        }
        acc /= C64::new((m * trials) as f64, 0.0);
        let sv = CMatrix::from_column_slice(l, 1, &s);
        let expected = (&sv * sv.adjoint()) * C64::new(k as f64, 0.0)
            + CMatrix::identity(l, l) * C64::new(sigma2, 0.0);
        assert!(crate::linalg::frobenius_relative_error(&acc, &expected) < 0.1);
    }

    #[test]
    fn phase2_cases() {
        let mut rng = rng_from_seed(4);
        let s = generate_preambles(6, 5, &mut rng);
        let one = ActivityPattern::from_indices(6, &[2]).unwrap();
        let y = generate_phase2_signal(&config(6, 3, 1, 1, 5, 1e-300), &one, &s, &mut rng).unwrap();
        assert_eq!(y.y.shape(), (5, 3));
        let s2 = s.column(2).into_owned();
        for col in y.y.column_iter() {
            let coef = (s2.adjoint() * col)[(0, 0)] / s2.norm_squared();
            assert!((col - &s2 * coef).norm() < 1e-10 * col.norm());
        }

        // K = 0 -> pure noise drawn from the same stream
        let none = ActivityPattern::from_indices(6, &[]).unwrap();
        let cfg = config(6, 3, 0, 1, 5, 2.0);
        let y = generate_phase2_signal(&cfg, &none, &s, &mut rng_from_seed(8)).unwrap();
        let z = noise(5, 3, 2.0, &mut rng_from_seed(8));
        assert_eq!(y.y, z);

        assert!(generate_phase2_signal(&cfg, &none, &s.columns(0, 5).into_owned(), &mut rng).is_err());
        let short = ActivityPattern::from_indices(5, &[]).unwrap();
        assert!(generate_phase2_signal(&cfg, &short, &s, &mut rng).is_err());
    }

    #[test]
    fn phase2_covariance_converges() {
        let (n, l, m) = (16, 8, 8);
        let sigma2 = 0.5;
        let mut rng = rng_from_seed(12);
        let s = generate_preambles(n, l, &mut rng);
        let act = ActivityPattern::from_indices(n, &[0, 5, 9, 15]).unwrap();
        let cfg = config(n, m, 4, 1, l, sigma2);
        let trials = 1000;
        let mut acc = CMatrix::zeros(l, l);
        for _ in 0..trials {
            let y = generate_phase2_signal(&cfg, &act, &s, &mut rng).unwrap();
            acc += &y.y * y.y.adjoint();
        }
        acc /= C64::new((m * trials) as f64, 0.0);
        let expected = crate::linalg::covariance(&s, &act.gamma(), sigma2);
        assert!(crate::linalg::frobenius_relative_error(&acc, &expected) < 0.1);
    }
}
