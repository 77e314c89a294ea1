//! Small dense helpers for the normal equations of localized fits.

use nalgebra::{DMatrix, DVector};

use crate::error::{RdError, Result};

/// Relative pivot tolerance for Cholesky factorizations of weighted Gram matrices.
pub const RANK_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
}

impl SpdFactor {
    /// Factor `a`, rejecting pivots below `RANK_TOL * max(diag(a))`.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        if !(max_diag > 0.0) || !max_diag.is_finite() {
            return Err(RdError::RankDeficient("zero or non-finite Gram diagonal".into()));
        }
        let tol = RANK_TOL * max_diag;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if d <= tol {
                return Err(RdError::RankDeficient(format!(
                    "pivot {j} is {d:e} (tolerance {tol:e})"
                )));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(SpdFactor { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }
}

/// Weighted least squares `argmin Σ wᵢ (yᵢ − dᵢᵀβ)²` for a row-major design given as columns.
pub fn weighted_least_squares(
    columns: &[&[f64]],
    y: &[f64],
    w: &[f64],
) -> Result<(DVector<f64>, SpdFactor)> {
    let k = columns.len();
    let mut gram = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for a in 0..k {
        let ca = columns[a];
        rhs[a] = (0..y.len()).map(|i| w[i] * ca[i] * y[i]).sum();
        for b in 0..=a {
            let cb = columns[b];
            let v: f64 = (0..y.len()).map(|i| w[i] * ca[i] * cb[i]).sum();
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let factor = SpdFactor::new(&gram)?;
    Ok((factor.solve(&rhs), factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = SpdFactor::new(&a).unwrap().solve(&b);
        assert!((&a * x - b).norm() < 1e-13);
    }

    #[test]
    fn singular_is_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(SpdFactor::new(&a), Err(RdError::RankDeficient(_))));
    }

    #[test]
    fn inverse_roundtrip() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let inv = SpdFactor::new(&a).unwrap().inverse();
        assert!((&a * inv - DMatrix::identity(2, 2)).norm() < 1e-14);
    }
}
