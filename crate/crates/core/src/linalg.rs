//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{EmvError, Result};

/// Relative symmetry tolerance applied before factorizing.
const SYMMETRY_TOL: f64 = 1e-10;

pub fn check_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(EmvError::invalid(format!(
            "{what} must be square and non-empty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EmvError::invalid(format!("{what} has non-finite entries")));
    }
    Ok(m.nrows())
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(EmvError::NotPositiveDefinite(format!("{what} is not symmetric")));
            }
        }
    }
    Ok(())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_square(m, what)?;
    check_symmetric(m, what)?;
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| EmvError::NotPositiveDefinite(what.to_string()))
}

/// `ln|m|` for SPD `m`, via its Cholesky factor.
pub fn log_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let l = cholesky_lower(m, what)?;
    Ok(log_det_lower(&l))
}

/// `ln|L L'|` for a lower-triangular factor with positive diagonal.
pub fn log_det_lower(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of an SPD matrix through its Cholesky factorization.
pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_square(m, what)?;
    check_symmetric(m, what)?;
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| EmvError::NotPositiveDefinite(what.to_string()))?;
    let inv = chol.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// 2-norm condition number from singular values; `inf` for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Positive semidefiniteness check with an eigenvalue tolerance relative to the
/// largest entry.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if check_symmetric(m, "").is_err() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let eig = symmetrize(m).symmetric_eigenvalues();
    eig.iter().all(|&e| e >= -1e-12 * scale)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `L z` for lower-triangular `l`, written into `out`.
pub fn lower_mul_into(l: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    let d = z.len();
    for i in 0..d {
        let mut acc = 0.0;
        for k in 0..=i {
            acc += l[(i, k)] * z[k];
        }
        out[i] = acc;
    }
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_lower(&m, "m"),
            Err(EmvError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let ld = log_det_spd(&m, "m").unwrap();
        assert!((ld - 11.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn psd_accepts_zero_and_rejects_negative() {
        assert!(is_psd(&DMatrix::zeros(3, 3)));
        assert!(!is_psd(&DMatrix::from_diagonal_element(2, 2, -1.0)));
    }

    #[test]
    fn condition_number_of_singular_is_infinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(condition_number(&m).is_infinite() || condition_number(&m) > 1e15);
    }
}
