//! Link-level simulator and solvers for two-stage grant-free random access.
//!
//! Phase I estimates how many devices are active from a preamble shared by
//! every device; the estimate sizes the Phase II preamble through a lookup
//! table and bounds how many coordinates the Phase II detector touches per
//! iteration. Phase II recovers the active set by maximum-likelihood
//! covariance fitting with coordinate descent.
//!
//! Module map:
//!
//! * [`system`] — link budget, activity patterns, preambles and received signals.
//! * [`estimator`] — sample covariance and the active-count estimator.
//! * [`detector`] — the ML objective, its gradient, and the CD, Active Set CD
//!   and K-CD solvers with FLOP accounting.
//! * [`protocol`] — lookup tables, table calibration, two-stage and grant-free trials.
//! * [`metrics`] — missed-detection / false-alarm rates and the equal-error rate.
//! * [`experiment`] — seeded Monte Carlo sweeps and CSV/JSON result tables.
//! * [`verify`] — brute-force and finite-difference reference checks.

pub mod detector;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod system;
pub mod verify;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix (column-major).
pub type CMatrix = nalgebra::DMatrix<C64>;
