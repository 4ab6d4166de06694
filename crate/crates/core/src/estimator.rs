//! Phase I: maximum-likelihood estimate of the number of active devices.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::dot_conj;
use crate::system::ReceivedSignal;
use crate::{CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    /// Stationary point of the likelihood, before clamping.
    pub k_hat_raw: f64,
    /// `k_hat_raw` clamped to `[0, N]` and rounded half-up.
    pub k_hat: usize,
}

/// Σ̂ = (1/M) Y Yᴴ.
pub fn sample_covariance(signal: &ReceivedSignal) -> CMatrix {
    let y = &signal.y;
    let m = y.ncols().max(1) as f64;
    let mut cov = y * y.adjoint();
    cov /= C64::new(m, 0.0);
    cov
}

/// K̂ = sᴴΣ̂s / ‖s‖⁴ − σ² / ‖s‖², clamped to the feasible range.
pub fn estimate_count(sigma_hat: &CMatrix, s: &[C64], sigma2: f64, n_devices: usize) -> Result<CountEstimate> {
    let l = s.len();
    if sigma_hat.shape() != (l, l) {
        return Err(invalid(format!(
            "sample covariance is {:?} but the preamble has length {l}",
            sigma_hat.shape()
        )));
    }
    let energy: f64 = s.iter().map(|x| x.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(invalid("Phase I preamble must be nonzero"));
    }
    let mut sigma_s = vec![C64::new(0.0, 0.0); l];
    crate::linalg::matvec(sigma_hat, s, &mut sigma_s);
    let quad = dot_conj(s, &sigma_s).re;
    let k_hat_raw = quad / (energy * energy) - sigma2 / energy;
    Ok(CountEstimate { k_hat_raw, k_hat: round_count(k_hat_raw, n_devices) })
}

/// Round half-up after clamping to `[0, n_devices]`.
pub fn round_count(raw: f64, n_devices: usize) -> usize {
    if raw.is_nan() {
        return 0;
    }
    let clamped = raw.clamp(0.0, n_devices as f64);
    ((clamped + 0.5).floor() as usize).min(n_devices)
}

/// Per-trial normalized error |K − K̂| / K.
pub fn estimation_error(k_true: usize, k_hat_raw: f64) -> Result<f64> {
    if k_true == 0 {
        return Err(crate::Error::UndefinedMetric("estimation error is undefined for K = 0".into()));
    }
    Ok((k_true as f64 - k_hat_raw).abs() / k_true as f64)
}
