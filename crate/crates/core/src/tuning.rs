//! Penalty level and bandwidth selection.
//!
//! Three penalty selectors are provided: an iterated plug-in with
//! heteroskedasticity-adjusted loadings ([`lambda_bch`]), a multiplier bootstrap
//! of the effective noise along a penalty grid ([`lambda_lv`]), and stratified
//! K-fold cross-validation ([`lambda_cv`]). Bandwidths come from an MSE-optimal
//! plug-in for the local linear jump estimator ([`pilot_bandwidth`],
//! [`final_bandwidth`]).
//!
//! All penalties are expressed on the scale of the kernel-weighted *sum*
//! objective in [`crate::selection`], where a row has weight `K(X/b)/b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{RdError, Result};
use crate::kernels::{BiasReading, Kernel};
use crate::linalg::weighted_least_squares;
use crate::local_linear::{fit_adjusted, fit_baseline, validate_bandwidth, IDENT_MARGIN, N_THETA};
use crate::selection::{
    finish, standardization_weights, LassoProblem, PenaltyWeights, SelectionResult, SolverOptions, MIN_LOADING,
};
use crate::stats::normal_quantile;

/// How the plug-in penalty formula maps onto the sum objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScale {
    /// `λ = 2c√(n/b) Φ⁻¹(1 − γ/2p)`: the formula for unit-height kernel weights `K(X/b)`,
    /// divided by `b` to match weights `K(X/b)/b`.
    #[default]
    KernelSum,
    /// `λ = 2c√(nb) Φ⁻¹(1 − γ/2p)` applied to the sum objective unchanged.
    Literal,
}

/// Where the loadings enter the bootstrap max-statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoadingPlacement {
    /// `max_k |(2/nb) Σ ŵₖ K Zₖ r e|`.
    Multiply,
    /// `max_k |(2/nb) Σ K Zₖ r e| / ŵₖ`, the scale of the optimality conditions.
    #[default]
    Divide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BchConfig {
    pub c: f64,
    pub gamma: f64,
    pub nu: f64,
    pub max_rounds: usize,
    pub scale: PenaltyScale,
}

impl Default for BchConfig {
    fn default() -> Self {
        BchConfig { c: 1.1, gamma: 0.05, nu: 1e-5, max_rounds: 10, scale: PenaltyScale::KernelSum }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LvConfig {
    /// Grid size; `None` means `5p`.
    pub m: Option<usize>,
    pub l: usize,
    pub alpha: f64,
    pub placement: LoadingPlacement,
}

impl Default for LvConfig {
    fn default() -> Self {
        LvConfig { m: None, l: 100, alpha: 0.05, placement: LoadingPlacement::Divide }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_size: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 10, grid_size: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub bch: BchConfig,
    pub lv: LvConfig,
    pub cv: CvConfig,
    pub rng_seed: u64,
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RdError::InvalidConfig(m.to_string()));
        if !(self.bch.c > 1.0) {
            return bad("bch.c must exceed 1");
        }
        if !(self.bch.gamma > 0.0 && self.bch.gamma < 1.0) {
            return bad("bch.gamma must lie in (0, 1)");
        }
        if !(self.lv.alpha > 0.0 && self.lv.alpha < 1.0) {
            return bad("lv.alpha must lie in (0, 1)");
        }
        if self.cv.folds < 2 {
            return bad("cv.folds must be at least 2");
        }
        if self.lv.l < 1 || self.lv.m == Some(0) || self.cv.grid_size < 1 {
            return bad("grid sizes and bootstrap draws must be positive");
        }
        Ok(())
    }
}

/// Geometric grid of `size` values spanning `[λ_max/10⁴, λ_max]`, ascending.
pub fn lambda_grid(lambda_max: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![lambda_max];
    }
    let lo = lambda_max * 1e-4;
    let ratio = (lambda_max / lo).ln() / (size - 1) as f64;
    (0..size)
        .map(|j| if j == size - 1 { lambda_max } else { lo * (ratio * j as f64).exp() })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BchOutcome {
    pub lambda: f64,
    pub weights: PenaltyWeights,
    pub rounds: usize,
    /// Lasso fit at the final loadings.
    pub selection: SelectionResult,
}

/// Plug-in penalty level `2c√(nb) Φ⁻¹(1 − γ/2p)` on the chosen scale.
pub fn bch_lambda(n: usize, p: usize, b: f64, cfg: &BchConfig) -> Result<f64> {
    if p == 0 {
        return Err(RdError::NonfiniteQuantile("no covariates".into()));
    }
    let q = normal_quantile(1.0 - cfg.gamma / (2.0 * p as f64));
    if !q.is_finite() {
        return Err(RdError::NonfiniteQuantile(format!("Φ⁻¹ at γ = {}, p = {p}", cfg.gamma)));
    }
    let nb = n as f64 * b;
    let literal = 2.0 * cfg.c * nb.sqrt() * q;
    Ok(match cfg.scale {
        PenaltyScale::Literal => literal,
        PenaltyScale::KernelSum => literal / b,
    })
}

fn residual_loadings(data: &Dataset, resid: &[f64], b: f64, kernel: &Kernel, factor: f64) -> Result<Vec<f64>> {
    let nb = data.n() as f64 * b;
    let kx: Vec<f64> = data.x().iter().map(|&x| kernel.eval(x / b)).collect();
    (0..data.p())
        .map(|k| {
            let z = data.covariate(k);
            let ss: f64 = (0..data.n())
                .filter(|&i| kx[i] > 0.0)
                .map(|i| (kx[i] * z[i] * resid[i]).powi(2))
                .sum();
            let w = (ss / nb).sqrt() * factor;
            if w >= MIN_LOADING {
                Ok(w)
            } else {
                Err(RdError::DegenerateCovariate { index: k, loading: w })
            }
        })
        .collect()
}

fn lasso_residuals(data: &Dataset, y: &[f64], sel: &SelectionResult, mu_z: &[f64], b: f64) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let x = data.x()[i];
            let t = Dataset::assigned(x);
            let v = [1.0, t, x / b, t * x / b];
            let mut fit: f64 = v.iter().zip(&sel.theta_tilde).map(|(a, c)| a * c).sum();
            for &k in &sel.selected {
                fit += (data.z()[(i, k)] - mu_z[k]) * sel.gamma_tilde[k];
            }
            y[i] - fit
        })
        .collect()
}

/// Iterated plug-in penalty with residual-based loadings.
pub fn lambda_bch(data: &Dataset, b: f64, kernel: &Kernel, cfg: &TuningConfig) -> Result<BchOutcome> {
    validate_bandwidth(b)?;
    let p = data.p();
    let n = data.n();
    let lambda = bch_lambda(n, p, b, &cfg.bch)?;
    let nb = n as f64 * b;

    let base = fit_baseline(data, b, kernel)?;
    let mu_z = standardization_weights(data, b, kernel)?.mu_z;
    let mut loadings = residual_loadings(data, &base.residuals, b, kernel, 1.0)?;

    let problem = LassoProblem::new(data, data.y(), b, kernel, &mu_z, true, None)?;
    let opts = SolverOptions::default();
    let mut warm: Option<Vec<f64>> = None;
    let mut rounds = 0;
    loop {
        let outcome = problem.solve(lambda, &loadings, &opts, warm.as_deref());
        let sel = finish(&problem, outcome, lambda, b);
        rounds += 1;
        let dof = nb - (sel.selected.len() + N_THETA) as f64;
        if dof <= 0.0 {
            return Err(RdError::TooFewObservations {
                what: "effective sample nb for the loading correction",
                have: nb.floor() as usize,
                need: sel.selected.len() + N_THETA + 1,
            });
        }
        let resid = lasso_residuals(data, data.y(), &sel, &mu_z, b);
        let updated = residual_loadings(data, &resid, b, kernel, (nb / dof).sqrt())?;
        let change = updated
            .iter()
            .zip(&loadings)
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max);
        loadings = updated;
        warm = Some(sel.gamma_tilde);
        if change < cfg.bch.nu || rounds >= cfg.bch.max_rounds {
            break;
        }
    }
    let outcome = problem.solve(lambda, &loadings, &opts, warm.as_deref());
    let selection = finish(&problem, outcome, lambda, b);
    Ok(BchOutcome { lambda, weights: PenaltyWeights { w: loadings, b, mu_z }, rounds, selection })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LvOutcome {
    pub lambda: f64,
    /// Zero-based index of the chosen grid value.
    pub index: usize,
    pub grid: Vec<f64>,
    /// Bootstrap quantiles on the comparison scale, `None` where the scan stopped early.
    pub quantiles: Vec<Option<f64>>,
}

/// Multiplier-bootstrap penalty choice along a geometric grid.
///
/// `q̂(λₘ)` is the upper `α` quantile (the `1 − α` empirical quantile) of the
/// bootstrap max-statistic, compared with `λₘ / n`, the penalty of the
/// objective rescaled to `(nb)⁻¹ Σ K(X/b)(⋯)²`. The grid is scanned from the
/// top, so the chosen index is the smallest `m` with `q̂(λₘ') ≤ λₘ'/n` for all
/// `m' ≥ m`.
pub fn lambda_lv(
    data: &Dataset,
    b: f64,
    kernel: &Kernel,
    weights: &PenaltyWeights,
    cfg: &TuningConfig,
    seed: u64,
) -> Result<LvOutcome> {
    validate_bandwidth(b)?;
    let p = data.p();
    let n = data.n();
    let m_grid = cfg.lv.m.unwrap_or(5 * p).max(2);
    let problem = LassoProblem::new(data, data.y(), b, kernel, &weights.mu_z, true, None)?;
    let lambda_max = problem.lambda_max(&weights.w);
    let grid = if lambda_max > 0.0 { lambda_grid(lambda_max, m_grid) } else { vec![0.0; m_grid] };

    let rows = &problem.rows;
    let m_rows = rows.len();
    let nb = n as f64 * b;
    // K(Xᵢ/b) Zᵢₖ with the loading factor folded in.
    let coef: Vec<f64> = (0..p)
        .map(|k| match cfg.lv.placement {
            LoadingPlacement::Multiply => 2.0 / nb * weights.w[k],
            LoadingPlacement::Divide => 2.0 / nb / weights.w[k],
        })
        .collect();
    let kz = nalgebra::DMatrix::from_fn(m_rows, p, |r, k| {
        let i = rows[r];
        kernel.eval(data.x()[i] / b) * data.z()[(i, k)]
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = nalgebra::DMatrix::from_fn(m_rows, cfg.lv.l, |_, _| rng.sample::<f64, _>(StandardNormal));

    let opts = SolverOptions::default();
    let mut quantiles = vec![None; m_grid];
    let mut warm: Option<Vec<f64>> = None;
    let mut chosen = 0;
    for m in (0..m_grid).rev() {
        let lambda = grid[m];
        let outcome = problem.solve(lambda, &weights.w, &opts, warm.as_deref());
        let saturated = problem.saturated(&outcome);
        let sel = finish(&problem, outcome, lambda, b);
        let resid = lasso_residuals(data, data.y(), &sel, &weights.mu_z, b);
        warm = Some(sel.gamma_tilde);

        let mut re = draws.clone();
        for r in 0..m_rows {
            let ri = resid[rows[r]];
            re.row_mut(r).scale_mut(ri);
        }
        let scores = kz.transpose() * re;
        let mut maxima: Vec<f64> = (0..cfg.lv.l)
            .map(|l| (0..p).map(|k| (coef[k] * scores[(k, l)]).abs()).fold(0.0, f64::max))
            .collect();
        let q = crate::stats::quantile(&mut maxima, 1.0 - cfg.lv.alpha);
        quantiles[m] = Some(q);
        if q > lambda / n as f64 {
            chosen = (m + 1).min(m_grid - 1);
            break;
        }
        if saturated {
            log::debug!("penalty path saturated at grid index {m}");
            chosen = m;
            break;
        }
    }
    Ok(LvOutcome { lambda: grid[chosen], index: chosen, grid, quantiles })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub lambda: f64,
    pub grid: Vec<f64>,
    /// Mean held-out loss per grid value.
    pub loss: Vec<f64>,
}

/// Fold labels for rows inside the pilot window, stratified by side of the cutoff.
///
/// Rows outside the window get `usize::MAX`.
pub fn stratified_folds(data: &Dataset, b: f64, kernel: &Kernel, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![usize::MAX; data.n()];
    for right in [false, true] {
        let mut side: Vec<usize> = (0..data.n())
            .filter(|&i| {
                let x = data.x()[i];
                (x >= 0.0) == right && kernel.weight(x, b) > 0.0
            })
            .collect();
        side.shuffle(&mut rng);
        for (pos, i) in side.into_iter().enumerate() {
            labels[i] = pos % folds;
        }
    }
    labels
}

/// Cross-validated penalty with randomly drawn stratified folds.
pub fn lambda_cv(
    data: &Dataset,
    b: f64,
    kernel: &Kernel,
    weights: &PenaltyWeights,
    cfg: &TuningConfig,
    seed: u64,
) -> Result<CvOutcome> {
    let labels = stratified_folds(data, b, kernel, cfg.cv.folds, seed);
    lambda_cv_with_folds(data, b, kernel, weights, cfg, &labels)
}

/// Cross-validated penalty with caller-supplied fold labels (one per row).
pub fn lambda_cv_with_folds(
    data: &Dataset,
    b: f64,
    kernel: &Kernel,
    weights: &PenaltyWeights,
    cfg: &TuningConfig,
    labels: &[usize],
) -> Result<CvOutcome> {
    validate_bandwidth(b)?;
    let folds = cfg.cv.folds;
    let full = LassoProblem::new(data, data.y(), b, kernel, &weights.mu_z, true, None)?;
    let grid = lambda_grid(full.lambda_max(&weights.w), cfg.cv.grid_size);
    let opts = SolverOptions::path();

    let mut loss = vec![0.0; grid.len()];
    let mut reached = vec![0usize; grid.len()];
    for f in 0..folds {
        let test: Vec<usize> = full.rows.iter().copied().filter(|&i| labels[i] == f).collect();
        let train: Vec<usize> = full.rows.iter().copied().filter(|&i| labels[i] != f).collect();
        if test.is_empty() || train.len() < N_THETA + IDENT_MARGIN {
            return Err(RdError::TooFewObservations {
                what: "observations per cross-validation fold",
                have: test.len().min(train.len()),
                need: N_THETA + IDENT_MARGIN,
            });
        }
        let problem = LassoProblem::new(data, data.y(), b, kernel, &weights.mu_z, true, Some(&train))?;
        let mut warm: Option<Vec<f64>> = None;
        for (g, &lambda) in grid.iter().enumerate().rev() {
            let outcome = problem.solve(lambda, &weights.w, &opts, warm.as_deref());
            let saturated = problem.saturated(&outcome);
            let sel = finish(&problem, outcome, lambda, b);
            let held_out: f64 = test
                .iter()
                .map(|&i| {
                    let x = data.x()[i];
                    let t = Dataset::assigned(x);
                    let v = [1.0, t, x / b, t * x / b];
                    let mut fit: f64 = v.iter().zip(&sel.theta_tilde).map(|(a, c)| a * c).sum();
                    for &k in &sel.selected {
                        fit += (data.z()[(i, k)] - weights.mu_z[k]) * sel.gamma_tilde[k];
                    }
                    kernel.weight(x, b) * (data.y()[i] - fit).powi(2)
                })
                .sum();
            loss[g] += held_out / folds as f64;
            reached[g] += 1;
            warm = Some(sel.gamma_tilde);
            if saturated {
                break;
            }
        }
    }
    // Penalties below the point where some fold's path saturated are not candidates.
    for (l, &r) in loss.iter_mut().zip(&reached) {
        if r < folds {
            *l = f64::INFINITY;
        }
    }
    // Ties go to the larger penalty.
    let best = (0..grid.len())
        .rev()
        .min_by(|&a, &b| loss[a].total_cmp(&loss[b]))
        .expect("non-empty grid");
    Ok(CvOutcome { lambda: grid[best], grid, loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthMethod {
    Fixed,
    Plugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PilotDiagnostics {
    pub curvature_right: f64,
    pub curvature_left: f64,
    pub curvature_diff_se: f64,
    pub sigma2_right: f64,
    pub sigma2_left: f64,
    pub density: f64,
    /// Regularized `|B̂|`.
    pub bias_term: f64,
    /// `Ŝ²`.
    pub variance_term: f64,
    /// True when the bandwidth was widened to reach the minimum window count.
    pub widened: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PilotBandwidth {
    pub bandwidth: f64,
    pub diagnostics: PilotDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthPlan {
    pub b: f64,
    pub h: f64,
    pub method: BandwidthMethod,
    pub pilot: Option<PilotDiagnostics>,
    pub final_diagnostics: Option<PilotDiagnostics>,
}

/// Minimum observations per side kept inside any plug-in bandwidth.
pub const MIN_PER_SIDE: usize = 5;

/// Widen `h` until each side holds `per_side` observations and the window holds `total`.
///
/// Kernels vanishing at `±1` give zero weight to points at exactly `|x| = h`, so the
/// returned bandwidth sits just above the last required point.
pub fn widen_to_count(x: &[f64], h: f64, per_side: usize, total: usize) -> f64 {
    let mut right: Vec<f64> = x.iter().copied().filter(|v| *v >= 0.0).collect();
    let mut left: Vec<f64> = x.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
    let mut all: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    right.sort_by(f64::total_cmp);
    left.sort_by(f64::total_cmp);
    all.sort_by(f64::total_cmp);
    let need = |v: &[f64], k: usize| if k == 0 { 0.0 } else { v.get(k - 1).copied().unwrap_or(f64::INFINITY) };
    let radius = need(&right, per_side).max(need(&left, per_side)).max(need(&all, total));
    if !radius.is_finite() {
        return h;
    }
    let strict = radius * (1.0 + 1e-9) + f64::MIN_POSITIVE;
    h.max(strict)
}

struct SideFit {
    curvature: f64,
    curvature_var: f64,
    sigma2: f64,
}

/// Global quartic fit of `y` on `x` for one side; curvature is the second derivative at 0.
fn quartic_side(x: &[f64], y: &[f64]) -> Result<SideFit> {
    let m = x.len();
    if m < 6 {
        return Err(RdError::TooFewObservations { what: "observations per side for the quartic pilot", have: m, need: 6 });
    }
    let s = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let cols: Vec<Vec<f64>> = (0..5).map(|j| x.iter().map(|v| (v / s).powi(j)).collect()).collect();
    let col_refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let ones = vec![1.0; m];
    let (coef, factor) = weighted_least_squares(&col_refs, y, &ones)?;
    let rss: f64 = (0..m)
        .map(|i| {
            let fit: f64 = (0..5).map(|j| coef[j] * cols[j][i]).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    let sigma2 = rss / (m - 5) as f64;
    let inv = factor.inverse();
    let scale = 2.0 / (s * s);
    Ok(SideFit { curvature: scale * coef[2], curvature_var: scale * scale * sigma2 * inv[(2, 2)], sigma2 })
}

/// Kernel density of the running variable at the cutoff.
///
/// Averages the two one-sided estimates, each renormalized by the half-kernel
/// mass, with a rule-of-thumb bandwidth rescaled to the kernel's second moment.
pub fn density_at_cutoff(x: &[f64], kernel: &Kernel) -> Result<f64> {
    let n = x.len() as f64;
    let sd = crate::stats::sample_sd(x);
    let mut sorted = x.to_vec();
    let q75 = crate::stats::quantile(&mut sorted, 0.75);
    let q25 = crate::stats::quantile(&mut sorted, 0.25);
    let iqr = (q75 - q25) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    let k2 = kernel.constants().full[2];
    let h = 0.9 * spread * n.powf(-0.2) / k2.sqrt();
    if !(h > 0.0) {
        return Err(RdError::DegenerateDensity(0.0));
    }
    let half = kernel.constants().right[0];
    let (mut right, mut left) = (0.0, 0.0);
    for &v in x {
        let k = kernel.eval(v / h);
        if v >= 0.0 {
            right += k;
        } else {
            left += k;
        }
    }
    let f = 0.5 * (right + left) / (n * h * half);
    if f > 0.0 && f.is_finite() {
        Ok(f)
    } else {
        Err(RdError::DegenerateDensity(f))
    }
}

/// MSE-optimal plug-in bandwidth for the jump in `E[y | x]` at zero.
pub fn plugin_bandwidth(x: &[f64], y: &[f64], kernel: &Kernel) -> Result<PilotBandwidth> {
    let n = x.len();
    if n < 50 {
        return Err(RdError::TooFewObservations { what: "observations for the plug-in bandwidth", have: n, need: 50 });
    }
    let (mut xr, mut yr, mut xl, mut yl) = (vec![], vec![], vec![], vec![]);
    for (&xi, &yi) in x.iter().zip(y) {
        if xi >= 0.0 {
            xr.push(xi);
            yr.push(yi);
        } else {
            xl.push(xi);
            yl.push(yi);
        }
    }
    let right = quartic_side(&xr, &yr)?;
    let left = quartic_side(&xl, &yl)?;
    let density = density_at_cutoff(x, kernel)?;

    let half_cb = 0.5 * kernel.bias_constant_with(BiasReading::Amended);
    let diff = right.curvature - left.curvature;
    let diff_se = (right.curvature_var + left.curvature_var).sqrt();
    let bias_term = (half_cb * half_cb * (diff * diff + 9.0 * diff_se * diff_se)).sqrt();
    let variance_term = kernel.variance_constant() * (right.sigma2 + left.sigma2) / density;

    let span = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let raw = if bias_term > 0.0 {
        (variance_term / (4.0 * bias_term * bias_term * n as f64)).powf(0.2)
    } else {
        span
    };
    let raw = if raw.is_finite() { raw.min(span) } else { span };
    let bandwidth = widen_to_count(x, raw, MIN_PER_SIDE, N_THETA + IDENT_MARGIN);
    Ok(PilotBandwidth {
        bandwidth,
        diagnostics: PilotDiagnostics {
            curvature_right: right.curvature,
            curvature_left: left.curvature,
            curvature_diff_se: diff_se,
            sigma2_right: right.sigma2,
            sigma2_left: left.sigma2,
            density,
            bias_term,
            variance_term,
            widened: bandwidth > raw,
        },
    })
}

/// Pilot bandwidth for the baseline estimator on the raw outcome.
pub fn pilot_bandwidth(data: &Dataset, kernel: &Kernel) -> Result<PilotBandwidth> {
    plugin_bandwidth(data.x(), data.y(), kernel)
}

/// Covariate-adjusted outcome `Yᵢ − Zᵢ(J)ᵀγ̂`, with `γ̂` from the post-Lasso fit at `b`.
pub fn adjusted_outcome(data: &Dataset, selected: &[usize], b: f64, kernel: &Kernel) -> Result<Vec<f64>> {
    if selected.is_empty() {
        return Ok(data.y().to_vec());
    }
    let b_fit = widen_to_count(data.x(), b, MIN_PER_SIDE, N_THETA + selected.len() + IDENT_MARGIN);
    let fit = fit_adjusted(data, selected, b_fit, kernel)?;
    Ok((0..data.n())
        .map(|i| {
            let adj: f64 = fit.subset.iter().zip(&fit.gamma).map(|(&k, g)| data.z()[(i, k)] * g).sum();
            data.y()[i] - adj
        })
        .collect())
}

/// Plug-in bandwidth applied to the covariate-adjusted outcome.
pub fn final_bandwidth(data: &Dataset, selected: &[usize], b: f64, kernel: &Kernel) -> Result<PilotBandwidth> {
    let adjusted = adjusted_outcome(data, selected, b, kernel)?;
    let mut pilot = plugin_bandwidth(data.x(), &adjusted, kernel)?;
    let widened = widen_to_count(data.x(), pilot.bandwidth, MIN_PER_SIDE, N_THETA + selected.len() + IDENT_MARGIN);
    if widened > pilot.bandwidth {
        pilot.bandwidth = widened;
        pilot.diagnostics.widened = true;
    }
    Ok(pilot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_geometric_and_ascending() {
        let g = lambda_grid(10.0, 5);
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], 10.0);
        assert!((g[0] - 1e-3).abs() < 1e-15);
        assert!((g[2] / g[1] - g[1] / g[0]).abs() < 1e-12);
        assert_eq!(lambda_grid(3.0, 1), vec![3.0]);
    }

    #[test]
    fn bch_formula() {
        let cfg = BchConfig { scale: PenaltyScale::Literal, ..Default::default() };
        // n = 1000, b = 0.2: nb = 200, p = 200.
        let lam = bch_lambda(1000, 200, 0.2, &cfg).unwrap();
        let want = 2.0 * 1.1 * 200f64.sqrt() * normal_quantile(1.0 - 0.000125);
        assert!((lam - want).abs() < 1e-12);
        assert!((lam - 113.9).abs() < 0.05, "{lam}");
        let scaled = bch_lambda(1000, 200, 0.2, &BchConfig::default()).unwrap();
        assert!((scaled - lam / 0.2).abs() < 1e-9);
        assert!(bch_lambda(1000, 1, 0.2, &cfg).unwrap().is_finite());
        assert!(matches!(bch_lambda(1000, 0, 0.2, &cfg), Err(RdError::NonfiniteQuantile(_))));
    }

    #[test]
    fn widen_reaches_counts() {
        let x: Vec<f64> = (-20..=20).map(|i| i as f64 / 20.0).collect();
        let h = widen_to_count(&x, 0.01, 5, 5);
        assert!(x.iter().filter(|v| **v >= 0.0 && **v < h).count() >= 5);
        assert!(x.iter().filter(|v| **v < 0.0 && -**v < h).count() >= 5);
        assert_eq!(widen_to_count(&x, 0.9, 5, 5), 0.9);
    }

    #[test]
    fn config_validation() {
        let mut cfg = TuningConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.bch.c = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TuningConfig::default();
        cfg.cv.folds = 1;
        assert!(cfg.validate().is_err());
    }
}
