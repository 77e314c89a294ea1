//! Localized, partially penalized Lasso used to select covariates.
//!
//! The objective is the kernel-weighted sum
//!
//! ```text
//! Σᵢ K_b(Xᵢ) (Yᵢ − Vᵢᵀθ − (Zᵢ − μ̂)ᵀγ)² + λ Σₖ ŵₖ |γₖ|
//! ```
//!
//! with `θ` unpenalized. Minimizing over `θ` first turns this into a plain
//! weighted Lasso in `γ` on covariates with `V` partialled out, which is what
//! the coordinate descent below iterates on. `θ` is recovered from the 4×4
//! normal equations at the end.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{RdError, Result};
use crate::kernels::Kernel;
use crate::linalg::SpdFactor;
use crate::local_linear::{validate_bandwidth, N_THETA};

/// Loadings below this are treated as a locally constant covariate.
pub const MIN_LOADING: f64 = 1e-12;

/// Share of the partialled sum of squares left unexplained at which a path stops.
pub const SATURATION_SSR: f64 = 1e-3;

/// Soft-thresholded coefficients below this magnitude are set to zero.
pub const ZERO_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    /// Penalty loadings `ŵₖ > 0`.
    pub w: Vec<f64>,
    pub b: f64,
    /// Local means `μ̂ = n⁻¹ Σ Zᵢ K_b(Xᵢ)` used to center the covariates.
    pub mu_z: Vec<f64>,
}

impl PenaltyWeights {
    pub fn max_loading(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }

    /// Same centering with different loadings.
    pub fn with_loadings(&self, w: Vec<f64>) -> Result<Self> {
        check_loadings(&w)?;
        Ok(PenaltyWeights { w, b: self.b, mu_z: self.mu_z.clone() })
    }
}

fn check_loadings(w: &[f64]) -> Result<()> {
    for (k, &v) in w.iter().enumerate() {
        if !(v >= MIN_LOADING) || !v.is_finite() {
            return Err(RdError::DegenerateCovariate { index: k, loading: v });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
    /// Relative tolerance on the largest scaled coefficient change.
    pub tol: f64,
    /// Try the exact minimizer on a stable support between sweeps.
    pub support_solve: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iter: 10_000, tol: 1e-9, support_solve: true }
    }
}

impl SolverOptions {
    /// Settings for solves along a penalty path used only for tuning:
    /// `max_k aₖ δₖ² ≤ 10⁻⁷ ‖target‖²`, the usual path-fitting threshold.
    pub fn path() -> Self {
        SolverOptions { max_iter: 10_000, tol: 1e-7f64.sqrt(), support_solve: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub theta_tilde: [f64; N_THETA],
    pub gamma_tilde: Vec<f64>,
    /// Sorted support of `gamma_tilde`.
    pub selected: Vec<usize>,
    pub lambda: f64,
    pub b: f64,
    pub objective: f64,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Local mean and spread of each covariate, as penalty loadings.
///
/// `ŵₖ² = (b/n) Σᵢ (K_b(Xᵢ) Zᵢₖ − μ̂ₖ)²`.
pub fn standardization_weights(data: &Dataset, b: f64, kernel: &Kernel) -> Result<PenaltyWeights> {
    validate_bandwidth(b)?;
    let inside = data.count_within(b);
    if inside < 2 {
        return Err(RdError::TooFewObservations {
            what: "observations inside the pilot bandwidth",
            have: inside,
            need: 2,
        });
    }
    let n = data.n() as f64;
    let kw: Vec<f64> = data.x().iter().map(|&x| kernel.weight(x, b)).collect();
    let mut mu_z = Vec::with_capacity(data.p());
    let mut w = Vec::with_capacity(data.p());
    for k in 0..data.p() {
        let z = data.covariate(k);
        let mu = z.iter().zip(&kw).map(|(z, k)| z * k).sum::<f64>() / n;
        let ss: f64 = z.iter().zip(&kw).map(|(z, k)| (k * z - mu).powi(2)).sum();
        let wk = (b / n * ss).sqrt();
        if !(wk >= MIN_LOADING) {
            return Err(RdError::DegenerateCovariate { index: k, loading: wk });
        }
        mu_z.push(mu);
        w.push(wk);
    }
    Ok(PenaltyWeights { w, b, mu_z })
}

/// A weighted Lasso in `γ` with an optional unpenalized `V` block already partialled out.
///
/// Only rows with positive kernel weight are stored; columns are scaled by `√wᵢ`.
#[derive(Debug, Clone)]
pub(crate) struct LassoProblem {
    /// Row indices into the dataset.
    pub rows: Vec<usize>,
    /// Scaled, centered covariates before partialling, `m × p`.
    centered: DMatrix<f64>,
    /// Scaled covariates after partialling out `V`, `m × p`.
    pub design: DMatrix<f64>,
    /// Scaled outcome after partialling out `V`.
    pub target: Vec<f64>,
    scaled_y: Vec<f64>,
    /// Scaled `V` block, `m × 4`, when present.
    v: Option<(DMatrix<f64>, SpdFactor)>,
    pub col_sq: Vec<f64>,
}

impl LassoProblem {
    pub fn new(
        data: &Dataset,
        y: &[f64],
        b: f64,
        kernel: &Kernel,
        mu_z: &[f64],
        with_v: bool,
        rows_filter: Option<&[usize]>,
    ) -> Result<Self> {
        validate_bandwidth(b)?;
        let candidates: Vec<usize> = match rows_filter {
            Some(r) => r.to_vec(),
            None => (0..data.n()).collect(),
        };
        let mut rows = Vec::new();
        let mut sqrt_w = Vec::new();
        for i in candidates {
            let w = kernel.weight(data.x()[i], b);
            if w > 0.0 {
                rows.push(i);
                sqrt_w.push(w.sqrt());
            }
        }
        let m = rows.len();
        if m == 0 {
            return Err(RdError::EmptyEffectiveSample);
        }
        let p = data.p();
        let centered = DMatrix::from_fn(m, p, |r, k| sqrt_w[r] * (data.z()[(rows[r], k)] - mu_z[k]));
        let scaled_y: Vec<f64> = rows.iter().zip(&sqrt_w).map(|(&i, s)| s * y[i]).collect();

        let (design, target, v) = if with_v {
            if m < N_THETA + 1 {
                return Err(RdError::TooFewObservations {
                    what: "observations inside the pilot bandwidth",
                    have: m,
                    need: N_THETA + 1,
                });
            }
            let v = DMatrix::from_fn(m, N_THETA, |r, j| {
                let x = data.x()[rows[r]];
                let t = Dataset::assigned(x);
                sqrt_w[r] * [1.0, t, x / b, t * x / b][j]
            });
            let factor = SpdFactor::new(&(v.transpose() * &v))?;
            let partial = |col: &DVector<f64>| -> DVector<f64> {
                let coef = factor.solve(&(v.transpose() * col));
                col - &v * coef
            };
            let mut design = centered.clone();
            for k in 0..p {
                let col = partial(&centered.column(k).into_owned());
                design.set_column(k, &col);
            }
            let target = partial(&DVector::from_column_slice(&scaled_y));
            (design, target.as_slice().to_vec(), Some((v, factor)))
        } else {
            (centered.clone(), scaled_y.clone(), None)
        };
        let col_sq = (0..p).map(|k| design.column(k).norm_squared()).collect();
        Ok(LassoProblem { rows, centered, design, target, scaled_y, v, col_sq })
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    /// `|2 xₖᵀ r|` for every column at `γ = 0`.
    pub fn null_scores(&self) -> Vec<f64> {
        let t = DVector::from_column_slice(&self.target);
        (0..self.p()).map(|k| 2.0 * self.design.column(k).dot(&t).abs()).collect()
    }

    /// Smallest `λ` at which every coefficient is zero.
    pub fn lambda_max(&self, loadings: &[f64]) -> f64 {
        self.null_scores()
            .iter()
            .zip(loadings)
            .map(|(s, w)| s / w)
            .fold(0.0, f64::max)
    }

    fn penalized_objective(&self, resid: &[f64], gamma: &[f64], lambda: f64, loadings: &[f64]) -> f64 {
        let ssr: f64 = resid.iter().map(|r| r * r).sum();
        let pen: f64 = gamma
            .iter()
            .zip(loadings)
            .filter(|(g, _)| **g != 0.0)
            .map(|(g, w)| w * g.abs())
            .sum();
        if pen == 0.0 {
            ssr
        } else {
            ssr + lambda * pen
        }
    }

    /// Cyclic coordinate descent from `warm` (or zero).
    ///
    /// Whenever the support and signs have been stable for a sweep, the exact
    /// minimizer on that support is tried; it is kept only if it satisfies the
    /// optimality conditions and lowers the objective. Convergence is always
    /// declared by a full coordinate sweep.
    pub fn solve(&self, lambda: f64, loadings: &[f64], opts: &SolverOptions, warm: Option<&[f64]>) -> CdOutcome {
        let p = self.p();
        let m = self.target.len();
        let mut gamma = warm.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
        let mut resid = self.target.clone();
        for k in 0..p {
            if gamma[k] != 0.0 {
                let col = self.design.column(k);
                for r in 0..m {
                    resid[r] -= col[r] * gamma[k];
                }
            }
        }
        let scale = self.target.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let threshold = opts.tol * scale;

        let mut trace = Vec::new();
        let mut sweeps = 0;
        let mut converged = false;
        let mut full_pass = true;
        let all: Vec<usize> = (0..p).collect();
        let mut last_signs = signs(&gamma);
        // Sweeps to wait before the next support solve; doubles after each failure.
        let mut gap = 1;
        let mut next_try = 0;

        while sweeps < opts.max_iter {
            let active: Vec<usize> = if full_pass {
                all.clone()
            } else {
                (0..p).filter(|&k| gamma[k] != 0.0).collect()
            };
            let mut max_change = 0.0_f64;
            for &k in &active {
                let a = self.col_sq[k];
                if a <= 0.0 {
                    gamma[k] = 0.0;
                    continue;
                }
                let col = self.design.column(k);
                let old = gamma[k];
                let c = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() + a * old;
                let mut new = soft_threshold(c, 0.5 * lambda * loadings[k]) / a;
                if new.abs() < ZERO_SNAP {
                    new = 0.0;
                }
                let delta = new - old;
                if delta != 0.0 {
                    for r in 0..m {
                        resid[r] -= col[r] * delta;
                    }
                    gamma[k] = new;
                    max_change = max_change.max(a.sqrt() * delta.abs());
                }
            }
            sweeps += 1;
            let mut objective = self.penalized_objective(&resid, &gamma, lambda, loadings);

            let small = max_change <= threshold;
            if full_pass {
                if small {
                    trace.push(objective);
                    converged = true;
                    break;
                }
                // Two full sweeps before restricting to the active set.
                full_pass = sweeps < 2;
            } else if small {
                full_pass = true;
            }

            let current = signs(&gamma);
            if current != last_signs {
                // A new support deserves a fresh attempt, spaced by the cost of one
                // support solve relative to a sweep.
                gap = 1 + current.len() / 4;
                next_try = next_try.min(sweeps + gap);
            }
            if opts.support_solve && !small && sweeps >= next_try && current == last_signs && !current.is_empty() {
                let accepted = match self.support_minimizer(lambda, loadings, &gamma, &current) {
                    Some((g, r)) => {
                        let polished = self.penalized_objective(&r, &g, lambda, loadings);
                        let better = polished <= objective;
                        if better {
                            gamma = g;
                            resid = r;
                            objective = polished;
                            full_pass = true;
                        }
                        better
                    }
                    None => false,
                };
                gap = if accepted { 1 } else { gap * 2 };
                next_try = sweeps + gap;
            }
            last_signs = current;
            trace.push(objective);
        }
        let ssr = resid.iter().map(|r| r * r).sum();
        CdOutcome { gamma, objective_trace: trace, iterations: sweeps, converged, ssr }
    }

    /// Whether a path solution has (nearly) interpolated the data, past which
    /// smaller penalties are not explored: fewer free rows than coefficients or
    /// 99.9% of the partialled sum of squares explained.
    pub fn saturated(&self, outcome: &CdOutcome) -> bool {
        let free_rows = self.target.len().saturating_sub(if self.v.is_some() { N_THETA } else { 0 });
        let active = outcome.gamma.iter().filter(|g| **g != 0.0).count();
        let total: f64 = self.target.iter().map(|v| v * v).sum();
        active + 1 >= free_rows || outcome.ssr <= SATURATION_SSR * total
    }

    /// Exact Lasso minimizer restricted to a support with fixed signs, if it is
    /// sign-consistent and satisfies the optimality conditions off the support.
    fn support_minimizer(
        &self,
        lambda: f64,
        loadings: &[f64],
        gamma: &[f64],
        support: &[(usize, bool)],
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = self.target.len();
        let s = support.len();
        if s >= m || !lambda.is_finite() {
            return None;
        }
        let cols: Vec<usize> = support.iter().map(|&(k, _)| k).collect();
        let xa = self.design.select_columns(&cols);
        let target = DVector::from_column_slice(&self.target);
        let mut rhs = xa.transpose() * &target;
        for (j, &(k, positive)) in support.iter().enumerate() {
            let sign = if positive { 1.0 } else { -1.0 };
            rhs[j] -= 0.5 * lambda * loadings[k] * sign;
        }
        let factor = SpdFactor::new(&(xa.transpose() * &xa)).ok()?;
        let coef = factor.solve(&rhs);
        if support.iter().zip(coef.iter()).any(|(&(_, positive), &c)| c == 0.0 || (c > 0.0) != positive) {
            return None;
        }
        let resid = &target - &xa * &coef;
        for k in 0..self.p() {
            if gamma[k] == 0.0 {
                let score = 2.0 * self.design.column(k).dot(&resid).abs();
                if score > lambda * loadings[k] {
                    return None;
                }
            }
        }
        let mut g = vec![0.0; self.p()];
        for (&k, &c) in cols.iter().zip(coef.iter()) {
            g[k] = c;
        }
        Some((g, resid.as_slice().to_vec()))
    }

    /// `θ̃` for a given `γ̃`, from the unpenalized normal equations.
    pub fn theta_for(&self, gamma: &[f64]) -> [f64; N_THETA] {
        let Some((v, factor)) = &self.v else {
            return [0.0; N_THETA];
        };
        let g = DVector::from_column_slice(gamma);
        let adjusted = DVector::from_column_slice(&self.scaled_y) - &self.centered * g;
        let t = factor.solve(&(v.transpose() * adjusted));
        [t[0], t[1], t[2], t[3]]
    }
}

pub(crate) struct CdOutcome {
    pub gamma: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared partialled residuals at `gamma`.
    pub ssr: f64,
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn signs(gamma: &[f64]) -> Vec<(usize, bool)> {
    gamma.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(k, g)| (k, *g > 0.0)).collect()
}

fn support(gamma: &[f64]) -> Vec<usize> {
    gamma.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(k, _)| k).collect()
}

pub(crate) fn finish(problem: &LassoProblem, outcome: CdOutcome, lambda: f64, b: f64) -> SelectionResult {
    if !outcome.converged {
        log::warn!(
            "coordinate descent stopped after {} sweeps without converging (lambda = {lambda})",
            outcome.iterations
        );
    }
    let theta_tilde = problem.theta_for(&outcome.gamma);
    SelectionResult {
        theta_tilde,
        selected: support(&outcome.gamma),
        objective: outcome.objective_trace.last().copied().unwrap_or(f64::NAN),
        gamma_tilde: outcome.gamma,
        lambda,
        b,
        objective_trace: outcome.objective_trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
    }
}

fn check_consistent(data: &Dataset, b: f64, weights: &PenaltyWeights) -> Result<()> {
    if weights.w.len() != data.p() || weights.mu_z.len() != data.p() {
        return Err(RdError::InvalidConfig("penalty weights do not match covariate count".into()));
    }
    if weights.b != b {
        return Err(RdError::InvalidConfig(format!(
            "penalty weights were computed at b = {}, not {b}",
            weights.b
        )));
    }
    check_loadings(&weights.w)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 {
        Ok(())
    } else {
        Err(RdError::InvalidConfig(format!("lambda must be non-negative, got {lambda}")))
    }
}

/// Localized Lasso with default solver settings.
pub fn local_lasso(
    data: &Dataset,
    b: f64,
    lambda: f64,
    kernel: &Kernel,
    weights: &PenaltyWeights,
) -> Result<SelectionResult> {
    local_lasso_with(data, data.y(), b, lambda, kernel, weights, &SolverOptions::default())
}

/// Localized Lasso on an arbitrary outcome with explicit solver settings.
pub fn local_lasso_with(
    data: &Dataset,
    y: &[f64],
    b: f64,
    lambda: f64,
    kernel: &Kernel,
    weights: &PenaltyWeights,
    opts: &SolverOptions,
) -> Result<SelectionResult> {
    check_lambda(lambda)?;
    check_consistent(data, b, weights)?;
    let problem = LassoProblem::new(data, y, b, kernel, &weights.mu_z, true, None)?;
    let outcome = problem.solve(lambda, &weights.w, opts, None);
    Ok(finish(&problem, outcome, lambda, b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Per-covariate violation of the optimality conditions.
    pub violations: Vec<f64>,
    /// `2 Σ K_b(Xᵢ) Vᵢ r̃ᵢ`, which must vanish.
    pub theta_score: [f64; N_THETA],
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().copied().fold(0.0, f64::max)
    }
}

/// Optimality certificate of a Lasso solution, computed from the raw data.
pub fn kkt_residuals(
    data: &Dataset,
    result: &SelectionResult,
    kernel: &Kernel,
    weights: &PenaltyWeights,
) -> KktReport {
    kkt_residuals_for(data, data.y(), result, kernel, weights)
}

pub fn kkt_residuals_for(
    data: &Dataset,
    y: &[f64],
    result: &SelectionResult,
    kernel: &Kernel,
    weights: &PenaltyWeights,
) -> KktReport {
    let b = result.b;
    let p = data.p();
    let mut scores = vec![0.0; p];
    let mut theta_score = [0.0; N_THETA];
    for i in 0..data.n() {
        let kw = kernel.weight(data.x()[i], b);
        if kw == 0.0 {
            continue;
        }
        let x = data.x()[i];
        let t = Dataset::assigned(x);
        let v = [1.0, t, x / b, t * x / b];
        let mut fitted: f64 = v.iter().zip(&result.theta_tilde).map(|(a, c)| a * c).sum();
        for k in 0..p {
            let g = result.gamma_tilde[k];
            if g != 0.0 {
                fitted += (data.z()[(i, k)] - weights.mu_z[k]) * g;
            }
        }
        let r = y[i] - fitted;
        for k in 0..p {
            scores[k] += 2.0 * kw * (data.z()[(i, k)] - weights.mu_z[k]) * r;
        }
        for j in 0..N_THETA {
            theta_score[j] += 2.0 * kw * v[j] * r;
        }
    }
    let violations = scores
        .iter()
        .zip(&weights.w)
        .zip(&result.gamma_tilde)
        .map(|((s, w), g)| {
            let bound = if result.lambda.is_infinite() { f64::INFINITY } else { result.lambda * w };
            if *g != 0.0 {
                (s.abs() - bound).abs()
            } else {
                (s.abs() - bound).max(0.0)
            }
        })
        .collect();
    KktReport { violations, theta_score }
}

/// Lasso of the treatment indicator on the centered covariates alone.
pub fn treatment_lasso(
    data: &Dataset,
    b: f64,
    lambda: f64,
    kernel: &Kernel,
    weights: &PenaltyWeights,
    opts: &SolverOptions,
) -> Result<SelectionResult> {
    check_lambda(lambda)?;
    check_consistent(data, b, weights)?;
    let t = data.treatment();
    let problem = LassoProblem::new(data, &t, b, kernel, &weights.mu_z, false, None)?;
    let outcome = problem.solve(lambda, &weights.w, opts, None);
    Ok(finish(&problem, outcome, lambda, b))
}

/// Union of the outcome Lasso support and the treatment Lasso support.
pub fn double_selection(
    data: &Dataset,
    b: f64,
    lambda_y: f64,
    lambda_t: f64,
    kernel: &Kernel,
    weights: &PenaltyWeights,
) -> Result<Vec<usize>> {
    double_selection_with(data, b, lambda_y, lambda_t, kernel, weights, weights)
}

/// [`double_selection`] with separate loadings for the treatment equation.
pub fn double_selection_with(
    data: &Dataset,
    b: f64,
    lambda_y: f64,
    lambda_t: f64,
    kernel: &Kernel,
    weights_y: &PenaltyWeights,
    weights_t: &PenaltyWeights,
) -> Result<Vec<usize>> {
    let opts = SolverOptions::default();
    let outcome = local_lasso_with(data, data.y(), b, lambda_y, kernel, weights_y, &opts)?;
    let treat = treatment_lasso(data, b, lambda_t, kernel, weights_t, &opts)?;
    let mut union: Vec<usize> = outcome.selected.iter().chain(&treat.selected).copied().collect();
    union.sort_unstable();
    union.dedup();
    Ok(union)
}
