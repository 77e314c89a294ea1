//! Kernel-weighted local linear fits with an optional fixed covariate subset.
//!
//! The regressors are `Vᵢ = (1, Tᵢ, Xᵢ/h, TᵢXᵢ/h)` followed by the selected
//! covariates, and each row carries weight `K(Xᵢ/h)/h`. The jump estimate is
//! the coefficient on `Tᵢ`.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{RdError, Result};
use crate::kernels::Kernel;
use crate::linalg::SpdFactor;

/// Number of local linear coefficients.
pub const N_THETA: usize = 4;

/// Observations required beyond the parameter count.
pub const IDENT_MARGIN: usize = 1;

#[derive(Debug, Clone)]
pub struct LocalFit {
    pub subset: Vec<usize>,
    pub h: f64,
    /// Intercept, jump, slope, slope change.
    pub theta: [f64; N_THETA],
    pub gamma: Vec<f64>,
    /// `Yᵢ − fitted` for every row; rows with zero weight are outside the window.
    pub residuals: Vec<f64>,
    /// Kernel weights `K(Xᵢ/h)/h`.
    pub weights: Vec<f64>,
    /// Observations with `|Xᵢ| ≤ h`.
    pub n_eff: usize,
    /// Weighted Gram matrix `Σ wᵢ dᵢdᵢᵀ` of the full design.
    pub gram: DMatrix<f64>,
    factor: SpdFactor,
}

impl LocalFit {
    pub fn tau(&self) -> f64 {
        self.theta[1]
    }

    /// Number of estimated coefficients.
    pub fn n_params(&self) -> usize {
        N_THETA + self.subset.len()
    }

    /// `(Σ wᵢ dᵢdᵢᵀ)⁻¹`.
    pub fn gram_inverse(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }

    /// Row `i` of the design.
    pub fn design_row(&self, data: &Dataset, i: usize) -> Vec<f64> {
        design_row(data, &self.subset, self.h, i)
    }

    /// Influence weights `ψᵢ = e₂ᵀ (DᵀWD)⁻¹ dᵢ wᵢ`, so that `τ̂ = Σ ψᵢ Yᵢ`.
    pub fn jump_influence(&self, data: &Dataset) -> Vec<f64> {
        let k = self.n_params();
        let mut e2 = DVector::zeros(k);
        e2[1] = 1.0;
        let row2 = self.factor.solve(&e2);
        (0..data.n())
            .map(|i| {
                let w = self.weights[i];
                if w == 0.0 {
                    return 0.0;
                }
                let d = self.design_row(data, i);
                w * d.iter().zip(row2.iter()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

pub(crate) fn design_row(data: &Dataset, subset: &[usize], h: f64, i: usize) -> Vec<f64> {
    let x = data.x()[i];
    let t = Dataset::assigned(x);
    let mut d = Vec::with_capacity(N_THETA + subset.len());
    d.extend_from_slice(&[1.0, t, x / h, t * x / h]);
    d.extend(subset.iter().map(|&k| data.z()[(i, k)]));
    d
}

pub(crate) fn validate_bandwidth(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(RdError::InvalidConfig(format!("bandwidth must be positive and finite, got {h}")))
    }
}

pub(crate) fn validate_subset(subset: &[usize], p: usize) -> Result<Vec<usize>> {
    let mut s = subset.to_vec();
    s.sort_unstable();
    if s.windows(2).any(|w| w[0] == w[1]) {
        return Err(RdError::InvalidConfig("duplicate covariate index".into()));
    }
    if let Some(&k) = s.last() {
        if k >= p {
            return Err(RdError::InvalidConfig(format!("covariate index {k} out of range (p = {p})")));
        }
    }
    Ok(s)
}

/// Kernel-weighted least squares on `(V, Z(J))` at bandwidth `h`.
pub fn fit_adjusted(data: &Dataset, subset: &[usize], h: f64, kernel: &Kernel) -> Result<LocalFit> {
    fit_outcome(data, data.y(), subset, h, kernel)
}

/// [`fit_adjusted`] with an arbitrary outcome vector in place of `data.y()`.
pub fn fit_outcome(data: &Dataset, y: &[f64], subset: &[usize], h: f64, kernel: &Kernel) -> Result<LocalFit> {
    validate_bandwidth(h)?;
    let subset = validate_subset(subset, data.p())?;
    if y.len() != data.n() {
        return Err(RdError::InvalidData("outcome length mismatch".into()));
    }
    let n_eff = data.count_within(h);
    let k = N_THETA + subset.len();
    if n_eff < k + IDENT_MARGIN {
        return Err(RdError::TooFewObservations {
            what: "observations inside the bandwidth",
            have: n_eff,
            need: k + IDENT_MARGIN,
        });
    }

    let weights: Vec<f64> = data.x().iter().map(|&x| kernel.weight(x, h)).collect();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..data.n() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let d = design_row(data, &subset, h, i);
        for a in 0..k {
            let wa = w * d[a];
            rhs[a] += wa * y[i];
            for b in 0..=a {
                gram[(a, b)] += wa * d[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let factor = SpdFactor::new(&gram)?;
    let coef = factor.solve(&rhs);

    let residuals = (0..data.n())
        .map(|i| {
            let d = design_row(data, &subset, h, i);
            y[i] - d.iter().zip(coef.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();

    Ok(LocalFit {
        theta: [coef[0], coef[1], coef[2], coef[3]],
        gamma: coef.iter().skip(N_THETA).copied().collect(),
        subset,
        h,
        residuals,
        weights,
        n_eff,
        gram,
        factor,
    })
}

/// Local linear fit without covariates.
pub fn fit_baseline(data: &Dataset, h: f64, kernel: &Kernel) -> Result<LocalFit> {
    fit_adjusted(data, &[], h, kernel)
}

/// Local linear coefficients by partialling the covariates out first.
///
/// `Y` and each column of `V` are regressed on `Z(J)` with kernel weights, and
/// `θ` is the weighted regression of the partialled outcome on the partialled
/// `V`. Algebraically identical to the joint solve in [`fit_adjusted`].
pub fn fwl_theta(data: &Dataset, subset: &[usize], h: f64, kernel: &Kernel) -> Result<[f64; N_THETA]> {
    validate_bandwidth(h)?;
    let subset = validate_subset(subset, data.p())?;
    let n = data.n();
    let w = DVector::from_iterator(n, data.x().iter().map(|&x| kernel.weight(x, h)));
    let v = DMatrix::from_fn(n, N_THETA, |i, j| {
        let x = data.x()[i];
        let t = Dataset::assigned(x);
        [1.0, t, x / h, t * x / h][j]
    });
    let y = DVector::from_column_slice(data.y());

    let (v_res, y_res) = if subset.is_empty() {
        (v, y)
    } else {
        let zj = DMatrix::from_fn(n, subset.len(), |i, j| data.z()[(i, subset[j])]);
        let wz = DMatrix::from_fn(n, subset.len(), |i, j| w[i] * zj[(i, j)]);
        let lu = (zj.transpose() * &wz).lu();
        let proj_v = lu
            .solve(&(wz.transpose() * &v))
            .ok_or_else(|| RdError::RankDeficient("Z(J)ᵀKZ(J) is singular".into()))?;
        let proj_y = lu
            .solve(&(wz.transpose() * &y))
            .ok_or_else(|| RdError::RankDeficient("Z(J)ᵀKZ(J) is singular".into()))?;
        (&v - &zj * proj_v, &y - &zj * proj_y)
    };

    let wv = DMatrix::from_fn(n, N_THETA, |i, j| w[i] * v_res[(i, j)]);
    let theta = (v_res.transpose() * &wv)
        .lu()
        .solve(&(wv.transpose() * y_res))
        .ok_or_else(|| RdError::RankDeficient("partialled V is singular".into()))?;
    Ok([theta[0], theta[1], theta[2], theta[3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect()
    }

    #[test]
    fn exact_piecewise_linear() {
        let x = grid(101);
        let y: Vec<f64> = x.iter().map(|&x| 0.3 + 1.7 * x + 0.25 * Dataset::assigned(x)).collect();
        let d = Dataset::without_covariates(y, x).unwrap();
        let h = 0.6;
        let fit = fit_baseline(&d, h, &Kernel::default()).unwrap();
        let want = [0.3, 0.25, 1.7 * h, 0.0];
        for (a, b) in fit.theta.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_outcome() {
        let x = grid(50);
        let d = Dataset::without_covariates(vec![2.5; 50], x).unwrap();
        let fit = fit_baseline(&d, 0.5, &Kernel::default()).unwrap();
        assert!(fit.tau().abs() < 1e-12);
        assert!((fit.theta[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn baseline_is_adjusted_with_empty_subset() {
        let x = grid(40);
        let y: Vec<f64> = x.iter().map(|x| (3.0 * x).sin()).collect();
        let d = Dataset::without_covariates(y, x).unwrap();
        let k = Kernel::new(KernelFamily::Epanechnikov);
        let a = fit_baseline(&d, 0.7, &k).unwrap();
        let b = fit_adjusted(&d, &[], 0.7, &k).unwrap();
        assert_eq!(a.theta, b.theta);
    }

    #[test]
    fn too_few_observations() {
        let x = grid(40);
        let d = Dataset::without_covariates(vec![0.0; 40], x).unwrap();
        let err = fit_baseline(&d, 0.05, &Kernel::default()).unwrap_err();
        assert!(matches!(err, RdError::TooFewObservations { .. }));
    }

    #[test]
    fn collinear_covariates_are_rank_deficient() {
        let x = grid(60);
        let rows: Vec<Vec<f64>> = x.iter().map(|&x| vec![x, 2.0 * x]).collect();
        let d = Dataset::from_rows(x.iter().map(|x| x * x).collect(), x, &rows, None).unwrap();
        let err = fit_adjusted(&d, &[0], 0.5, &Kernel::default()).unwrap_err();
        assert!(matches!(err, RdError::RankDeficient(_)));
        assert!(fit_adjusted(&d, &[0, 0], 0.5, &Kernel::default()).is_err());
        assert!(fit_adjusted(&d, &[5], 0.5, &Kernel::default()).is_err());
    }

    #[test]
    fn influence_reproduces_jump() {
        let x = grid(80);
        let y: Vec<f64> = x.iter().map(|x| (2.0 * x).cos() + x * x * x).collect();
        let rows: Vec<Vec<f64>> = x.iter().map(|x| vec![(5.0 * x).sin()]).collect();
        let d = Dataset::from_rows(y, x, &rows, None).unwrap();
        let fit = fit_adjusted(&d, &[0], 0.6, &Kernel::default()).unwrap();
        let psi = fit.jump_influence(&d);
        let tau: f64 = psi.iter().zip(d.y()).map(|(a, b)| a * b).sum();
        assert!((tau - fit.tau()).abs() < 1e-12);
    }
}
