//! Dense complex kernels used on the detector hot path, plus the direct
//! factorizations that serve as references.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::{CMatrix, C64};

/// `out = a * x` for a square column-major matrix.
pub fn matvec(a: &CMatrix, x: &[C64], out: &mut [C64]) {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), x.len());
    debug_assert_eq!(out.len(), n);
    out.fill(C64::new(0.0, 0.0));
    for (col, &xj) in a.as_slice().chunks_exact(n).zip(x) {
        if xj.re == 0.0 && xj.im == 0.0 {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(col) {
            *o += aij * xj;
        }
    }
}

/// `Σ conj(x_i) y_i`.
pub fn dot_conj(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// `a ← a − scale · u uᴴ`.
pub fn rank_one_downdate(a: &mut CMatrix, u: &[C64], scale: f64) {
    let n = a.nrows();
    for (col, &uj) in a.as_mut_slice().chunks_exact_mut(n).zip(u) {
        let w = uj.conj() * scale;
        for (aij, &ui) in col.iter_mut().zip(u) {
            *aij -= ui * w;
        }
    }
}

/// Σ = Σ_n γ_n s_n s_nᴴ + σ² I.
pub fn covariance(preambles: &CMatrix, gamma: &[f64], sigma2: f64) -> CMatrix {
    let l = preambles.nrows();
    let mut sigma = CMatrix::from_diagonal_element(l, l, C64::new(sigma2, 0.0));
    for (n, &g) in gamma.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let s = preambles.column(n);
        sigma += (&s * s.adjoint()) * C64::new(g, 0.0);
    }
    sigma
}

fn cholesky(a: &CMatrix) -> Result<Cholesky<C64, nalgebra::Dyn>> {
    let not_hpd = || Error::NumericFailure("matrix is not Hermitian positive definite".into());
    let chol = a.clone().cholesky().ok_or_else(not_hpd)?;
    // complex square roots accept negative pivots, so check them explicitly
    let ok = chol
        .l_dirty()
        .diagonal()
        .iter()
        .all(|d| d.re > 0.0 && d.re.is_finite() && d.im.abs() <= 1e-8 * d.re);
    if ok {
        Ok(chol)
    } else {
        Err(not_hpd())
    }
}

/// Inverse of a Hermitian positive definite matrix by Cholesky factorization.
pub fn hpd_inverse(a: &CMatrix) -> Result<CMatrix> {
    let inv = cholesky(a)?.inverse();
    Ok(hermitian_part(&inv))
}

/// `log det a` for Hermitian positive definite `a`.
pub fn hpd_log_det(a: &CMatrix) -> Result<f64> {
    let chol = cholesky(a)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>())
}

/// `(log det a, trace(a⁻¹ b))` from one factorization of `a`.
pub fn hpd_log_det_and_trace_solve(a: &CMatrix, b: &CMatrix) -> Result<(f64, f64)> {
    let chol = cholesky(a)?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
    let x = chol.solve(b);
    Ok((log_det, x.trace().re))
}

/// `(a + aᴴ) / 2`.
pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn frobenius_relative_error(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_gaussian, rng_from_seed};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut rng = rng_from_seed(seed);
        CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut rng, 1.0))
    }

    #[test]
    fn matvec_matches_nalgebra() {
        let a = random_matrix(5, 5, 1);
        let x = random_matrix(5, 1, 2);
        let mut out = vec![C64::new(0.0, 0.0); 5];
        matvec(&a, x.as_slice(), &mut out);
        let expected = &a * &x;
        for (o, e) in out.iter().zip(expected.iter()) {
            assert!((o - e).norm() < 1e-12);
        }
    }

    #[test]
    fn downdate_matches_outer_product() {
        let mut a = random_matrix(4, 4, 3);
        let u = random_matrix(4, 1, 4);
        let expected = &a - (&u * u.adjoint()) * C64::new(0.7, 0.0);
        rank_one_downdate(&mut a, u.as_slice(), 0.7);
        assert!(frobenius_relative_error(&a, &expected) < 1e-14);
    }

    #[test]
    fn inverse_and_log_det_of_covariance() {
        let s = random_matrix(3, 5, 5);
        let gamma = [0.2, 1.0, 0.0, 0.5, 0.9];
        let sigma = covariance(&s, &gamma, 0.3);
        let inv = hpd_inverse(&sigma).unwrap();
        let eye = CMatrix::identity(3, 3);
        assert!(frobenius_relative_error(&(&sigma * &inv), &eye) < 1e-12);
        let det = sigma.determinant();
        assert!(det.im.abs() < 1e-9 * det.re.abs());
        assert!((hpd_log_det(&sigma).unwrap() - det.re.ln()).abs() < 1e-10);
    }

    #[test]
    fn indefinite_matrix_is_a_numeric_failure() {
        let a = CMatrix::from_diagonal_element(2, 2, C64::new(-1.0, 0.0));
        assert!(matches!(hpd_inverse(&a), Err(Error::NumericFailure(_))));
    }
}
