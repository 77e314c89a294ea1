//! The two-step estimator end to end: covariate selection at a pilot bandwidth,
//! post-Lasso local linear fit at the final bandwidth, standard errors and
//! confidence intervals, the fuzzy ratio estimator, and covariate balance tests.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{RdError, Result};
use crate::kernels::{Kernel, KernelFamily};
use crate::local_linear::{fit_outcome, LocalFit, IDENT_MARGIN, N_THETA};
use crate::selection::{
    local_lasso_with, standardization_weights, treatment_lasso, PenaltyWeights, SelectionResult, SolverOptions,
};
use crate::stats::{benjamini_hochberg, normal_quantile, two_sided_p};
use crate::tuning::{
    adjusted_outcome, bch_lambda, density_at_cutoff, lambda_bch, lambda_cv, lambda_lv, plugin_bandwidth,
    widen_to_count, BandwidthMethod, BandwidthPlan, PilotDiagnostics, TuningConfig, MIN_PER_SIDE,
};

/// Smallest first-stage jump accepted by [`estimate_fuzzy`].
pub const WEAK_JUMP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum LambdaMethod {
    #[default]
    Bch,
    Lv,
    Cv,
    /// A user-supplied penalty; `f64::INFINITY` disables selection.
    Fixed(f64),
}

impl LambdaMethod {
    pub fn label(&self) -> String {
        match self {
            LambdaMethod::Bch => "bch".into(),
            LambdaMethod::Lv => "lv".into(),
            LambdaMethod::Cv => "cv".into(),
            LambdaMethod::Fixed(l) if l.is_infinite() => "inf".into(),
            LambdaMethod::Fixed(l) => l.to_string(),
        }
    }
}

impl From<LambdaMethod> for String {
    fn from(m: LambdaMethod) -> String {
        m.label()
    }
}

impl TryFrom<String> for LambdaMethod {
    type Error = RdError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for LambdaMethod {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bch" => Ok(LambdaMethod::Bch),
            "lv" => Ok(LambdaMethod::Lv),
            "cv" => Ok(LambdaMethod::Cv),
            "inf" | "infinity" | "none" => Ok(LambdaMethod::Fixed(f64::INFINITY)),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0)
                .map(LambdaMethod::Fixed)
                .ok_or_else(|| {
                    RdError::InvalidConfig(format!(
                        "unknown lambda method `{s}` (expected bch, lv, cv, or a non-negative number)"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeMethod {
    #[default]
    Plugin,
    Sandwich,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Sharp,
    Fuzzy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub kernel: KernelFamily,
    pub lambda_method: LambdaMethod,
    /// Fixed pilot bandwidth `b`; plug-in when `None`.
    pub pilot_bandwidth: Option<f64>,
    /// Fixed final bandwidth `h`; plug-in on the adjusted outcome when `None`.
    pub bandwidth: Option<f64>,
    pub level: f64,
    pub se_method: SeMethod,
    pub double_selection: bool,
    pub tuning: TuningConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            kernel: KernelFamily::Triangular,
            lambda_method: LambdaMethod::Bch,
            pilot_bandwidth: None,
            bandwidth: None,
            level: 0.95,
            se_method: SeMethod::Plugin,
            double_selection: false,
            tuning: TuningConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(RdError::InvalidConfig(format!("level must lie in (0, 1), got {}", self.level)));
        }
        for (name, v) in [("pilot bandwidth", self.pilot_bandwidth), ("bandwidth", self.bandwidth)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(RdError::InvalidConfig(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let LambdaMethod::Fixed(l) = self.lambda_method {
            if !(l >= 0.0) {
                return Err(RdError::InvalidConfig(format!("lambda must be non-negative, got {l}")));
            }
        }
        self.tuning.validate()
    }

    pub fn kernel(&self) -> Kernel {
        Kernel::new(self.kernel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FuzzyComponents {
    pub tau_y: f64,
    pub tau_t: f64,
    pub var_y: f64,
    pub var_t: f64,
    pub cov_yt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RDEstimate {
    pub tau_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub h: f64,
    pub b: f64,
    /// `None` when there was nothing to select from.
    pub lambda: Option<f64>,
    pub lambda_method: LambdaMethod,
    pub selected: Vec<usize>,
    pub n_eff: usize,
    pub design: Design,
    pub components: Option<FuzzyComponents>,
    /// Set when the standard error collapsed to zero.
    pub se_degenerate: bool,
    pub bandwidths: BandwidthPlan,
}

impl RDEstimate {
    pub fn ci(&self) -> (f64, f64) {
        (self.ci_lower, self.ci_upper)
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower <= value && value <= self.ci_upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StandardError {
    pub se: f64,
    /// True when the residual variance was zero and the SE was set to 0.
    pub degenerate: bool,
}

/// `τ̂ ± Φ⁻¹(1 − (1 − level)/2) · se`.
pub fn confidence_interval(tau_hat: f64, se: f64, level: f64) -> (f64, f64) {
    if se == 0.0 {
        log::warn!("standard error is zero; confidence interval degenerates to a point");
        return (tau_hat, tau_hat);
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    (tau_hat - z * se, tau_hat + z * se)
}

/// Standard error of the jump in a local fit.
///
/// `Plugin` uses `√(C_S (σ̂²₊ + σ̂²₋) / (f̂(0) n h))` with side-wise kernel-weighted
/// residual variances; `Sandwich` is the heteroskedasticity-robust variance of the
/// weighted least squares jump coefficient.
pub fn standard_error(fit: &LocalFit, data: &Dataset, kernel: &Kernel, method: SeMethod) -> Result<StandardError> {
    match method {
        SeMethod::Plugin => plugin_se(fit, data, kernel),
        SeMethod::Sandwich => Ok(sandwich_se(fit, data)),
    }
}

fn plugin_se(fit: &LocalFit, data: &Dataset, kernel: &Kernel) -> Result<StandardError> {
    let mut sums = [(0.0, 0.0, 0usize); 2];
    for i in 0..data.n() {
        let w = fit.weights[i];
        if w == 0.0 {
            continue;
        }
        let side = usize::from(data.x()[i] >= 0.0);
        sums[side].0 += w * fit.residuals[i] * fit.residuals[i];
        sums[side].1 += w;
        sums[side].2 += 1;
    }
    let half_params = fit.n_params() as f64 / 2.0;
    let mut sigma2 = 0.0;
    for (ssr, wsum, count) in sums {
        let dof = count as f64 - half_params;
        if dof <= 0.0 || wsum <= 0.0 {
            return Err(RdError::TooFewObservations {
                what: "observations per side for the variance estimate",
                have: count,
                need: half_params.ceil() as usize + 1,
            });
        }
        sigma2 += ssr / wsum * count as f64 / dof;
    }
    if sigma2 <= 0.0 {
        log::warn!("residual variance is zero; standard error set to 0");
        return Ok(StandardError { se: 0.0, degenerate: true });
    }
    let density = density_at_cutoff(data.x(), kernel)?;
    let s2 = kernel.variance_constant() * sigma2 / density;
    Ok(StandardError { se: (s2 / (data.n() as f64 * fit.h)).sqrt(), degenerate: false })
}

fn sandwich_se(fit: &LocalFit, data: &Dataset) -> StandardError {
    let psi = fit.jump_influence(data);
    let var: f64 = psi.iter().zip(&fit.residuals).map(|(p, r)| (p * r).powi(2)).sum();
    StandardError { se: var.sqrt(), degenerate: var == 0.0 }
}

/// Output of the selection step.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStage {
    pub b: f64,
    pub pilot: Option<PilotDiagnostics>,
    pub lambda: Option<f64>,
    pub selected: Vec<usize>,
    pub lasso: Option<SelectionResult>,
}

fn resolve_pilot(data: &Dataset, cfg: &PipelineConfig, kernel: &Kernel) -> Result<(f64, Option<PilotDiagnostics>)> {
    match cfg.pilot_bandwidth {
        Some(b) => Ok((b, None)),
        None => {
            let pilot = plugin_bandwidth(data.x(), data.y(), kernel)?;
            Ok((pilot.bandwidth, Some(pilot.diagnostics)))
        }
    }
}

/// Run the Lasso for `y` at pilot bandwidth `b` with the configured penalty rule.
fn lasso_stage(data: &Dataset, b: f64, cfg: &PipelineConfig, kernel: &Kernel) -> Result<(f64, SelectionResult, PenaltyWeights)> {
    let opts = SolverOptions::default();
    let seed = cfg.tuning.rng_seed;
    match cfg.lambda_method {
        LambdaMethod::Bch => {
            let out = lambda_bch(data, b, kernel, &cfg.tuning)?;
            Ok((out.lambda, out.selection, out.weights))
        }
        method => {
            let weights = standardization_weights(data, b, kernel)?;
            let lambda = match method {
                LambdaMethod::Fixed(l) => l,
                LambdaMethod::Lv => lambda_lv(data, b, kernel, &weights, &cfg.tuning, seed)?.lambda,
                LambdaMethod::Cv => lambda_cv(data, b, kernel, &weights, &cfg.tuning, seed)?.lambda,
                LambdaMethod::Bch => unreachable!(),
            };
            let sel = local_lasso_with(data, data.y(), b, lambda, kernel, &weights, &opts)?;
            Ok((lambda, sel, weights))
        }
    }
}

/// Treatment-equation loadings `√((nb)⁻¹ Σ K(Xᵢ/b)² Zᵢₖ² Tᵢ²)` and the matching plug-in penalty.
fn treatment_penalty(data: &Dataset, b: f64, kernel: &Kernel, cfg: &PipelineConfig, mu_z: &[f64]) -> Result<(f64, PenaltyWeights)> {
    let t = data.treatment();
    let nb = data.n() as f64 * b;
    let w = (0..data.p())
        .map(|k| {
            let z = data.covariate(k);
            let ss: f64 = (0..data.n()).map(|i| (kernel.eval(data.x()[i] / b) * z[i] * t[i]).powi(2)).sum();
            (ss / nb).sqrt().max(crate::selection::MIN_LOADING)
        })
        .collect();
    let lambda = bch_lambda(data.n(), data.p(), b, &cfg.tuning.bch)?;
    Ok((lambda, PenaltyWeights { w, b, mu_z: mu_z.to_vec() }))
}

/// True when the local linear fit at `b` leaves no residual variation, so there
/// is nothing for covariates to explain (for example a treatment indicator that
/// is constant near the cutoff).
fn explained_by_line(data: &Dataset, b: f64, kernel: &Kernel) -> Result<bool> {
    let fit = fit_outcome(data, data.y(), &[], b, kernel)?;
    let scale = data.y().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    Ok(fit
        .residuals
        .iter()
        .zip(&fit.weights)
        .all(|(r, &w)| w == 0.0 || r.abs() <= 1e-12 * scale))
}

/// Pilot bandwidth, penalty choice, and localized Lasso.
pub fn select_covariates(data: &Dataset, cfg: &PipelineConfig) -> Result<SelectionStage> {
    cfg.validate()?;
    let kernel = cfg.kernel();
    let (b, pilot) = resolve_pilot(data, cfg, &kernel)?;
    if data.p() == 0 || explained_by_line(data, b, &kernel)? {
        return Ok(SelectionStage { b, pilot, lambda: None, selected: vec![], lasso: None });
    }
    let (lambda, sel, weights) = lasso_stage(data, b, cfg, &kernel)?;
    let mut selected = sel.selected.clone();
    if cfg.double_selection {
        let (lambda_t, weights_t) = treatment_penalty(data, b, &kernel, cfg, &weights.mu_z)?;
        let treat = treatment_lasso(data, b, lambda_t, &kernel, &weights_t, &SolverOptions::default())?;
        selected.extend(treat.selected);
        selected.sort_unstable();
        selected.dedup();
    }
    Ok(SelectionStage { b, pilot, lambda: Some(lambda), selected, lasso: Some(sel) })
}

fn resolve_final(
    data: &Dataset,
    selected: &[usize],
    b: f64,
    cfg: &PipelineConfig,
    kernel: &Kernel,
) -> Result<(f64, Option<PilotDiagnostics>)> {
    let (h, diag) = match cfg.bandwidth {
        Some(h) => (h, None),
        None => {
            let adjusted = adjusted_outcome(data, selected, b, kernel)?;
            let plan = plugin_bandwidth(data.x(), &adjusted, kernel)?;
            (plan.bandwidth, Some(plan.diagnostics))
        }
    };
    let need = N_THETA + selected.len() + IDENT_MARGIN;
    let widened = if cfg.bandwidth.is_some() { h } else { widen_to_count(data.x(), h, MIN_PER_SIDE, need) };
    Ok((widened, diag))
}

/// Post-Lasso fit for a given covariate set, with the final bandwidth, SE, and CI.
pub fn post_selection_estimate(
    data: &Dataset,
    selected: &[usize],
    b: f64,
    lambda: Option<f64>,
    pilot: Option<PilotDiagnostics>,
    cfg: &PipelineConfig,
) -> Result<RDEstimate> {
    let kernel = cfg.kernel();
    let (h, final_diag) = resolve_final(data, selected, b, cfg, &kernel)?;
    let fit = fit_outcome(data, data.y(), selected, h, &kernel)?;
    let se = standard_error(&fit, data, &kernel, cfg.se_method)?;
    let (ci_lower, ci_upper) = confidence_interval(fit.tau(), se.se, cfg.level);
    let method = if cfg.pilot_bandwidth.is_some() && cfg.bandwidth.is_some() {
        BandwidthMethod::Fixed
    } else {
        BandwidthMethod::Plugin
    };
    Ok(RDEstimate {
        tau_hat: fit.tau(),
        se: se.se,
        ci_lower,
        ci_upper,
        level: cfg.level,
        h,
        b,
        lambda,
        lambda_method: cfg.lambda_method,
        selected: fit.subset.clone(),
        n_eff: fit.n_eff,
        design: Design::Sharp,
        components: None,
        se_degenerate: se.degenerate,
        bandwidths: BandwidthPlan { b, h, method, pilot, final_diagnostics: final_diag },
    })
}

/// Sharp RD estimate with covariate selection.
pub fn estimate_sharp(data: &Dataset, cfg: &PipelineConfig) -> Result<RDEstimate> {
    let stage = select_covariates(data, cfg)?;
    if data.count_within(stage.b) == 0 {
        return Err(RdError::EmptyEffectiveSample);
    }
    post_selection_estimate(data, &stage.selected, stage.b, stage.lambda, stage.pilot, cfg)
}

/// Fuzzy RD estimate: ratio of the outcome jump to the treatment jump.
///
/// The selection step runs separately for `Y` and `T` at a shared pilot bandwidth;
/// both post-Lasso fits use the final bandwidth chosen for `Y`. The standard error
/// is the delta method with the joint covariance of the two jump estimates taken
/// from their influence weights, `Σᵢ ψᵧᵢ ψₜᵢ rᵧᵢ rₜᵢ`.
pub fn estimate_fuzzy(data: &Dataset, cfg: &PipelineConfig) -> Result<RDEstimate> {
    let t = data
        .t_obs()
        .ok_or_else(|| RdError::InvalidData("fuzzy design needs an observed treatment column".into()))?
        .to_vec();

    let deterministic = t.iter().zip(data.x()).all(|(&ti, &x)| ti == Dataset::assigned(x));
    if deterministic {
        let mut est = estimate_sharp(data, cfg)?;
        est.design = Design::Fuzzy;
        est.components = Some(FuzzyComponents {
            tau_y: est.tau_hat,
            tau_t: 1.0,
            var_y: est.se * est.se,
            var_t: 0.0,
            cov_yt: 0.0,
        });
        return Ok(est);
    }

    let kernel = cfg.kernel();
    let stage_y = select_covariates(data, cfg)?;
    let b = stage_y.b;
    let t_data = data.with_outcome(t.clone())?;
    let t_cfg = PipelineConfig { pilot_bandwidth: Some(b), ..cfg.clone() };
    let stage_t = select_covariates(&t_data, &t_cfg)?;

    let (h_y, final_diag) = resolve_final(data, &stage_y.selected, b, cfg, &kernel)?;
    let need = N_THETA + stage_y.selected.len().max(stage_t.selected.len()) + IDENT_MARGIN;
    let h = if cfg.bandwidth.is_some() { h_y } else { widen_to_count(data.x(), h_y, MIN_PER_SIDE, need) };

    let fit_y = fit_outcome(data, data.y(), &stage_y.selected, h, &kernel)?;
    let fit_t = fit_outcome(data, &t, &stage_t.selected, h, &kernel)?;
    let (tau_y, tau_t) = (fit_y.tau(), fit_t.tau());
    if tau_t.abs() < WEAK_JUMP {
        return Err(RdError::WeakJump(tau_t));
    }

    let psi_y = fit_y.jump_influence(data);
    let psi_t = fit_t.jump_influence(data);
    let (mut var_y, mut var_t, mut cov_yt) = (0.0, 0.0, 0.0);
    for i in 0..data.n() {
        let uy = psi_y[i] * fit_y.residuals[i];
        let ut = psi_t[i] * fit_t.residuals[i];
        var_y += uy * uy;
        var_t += ut * ut;
        cov_yt += uy * ut;
    }
    let tau = tau_y / tau_t;
    let var = (var_y - 2.0 * tau * cov_yt + tau * tau * var_t) / (tau_t * tau_t);
    let se = var.max(0.0).sqrt();
    let (ci_lower, ci_upper) = confidence_interval(tau, se, cfg.level);
    let mut selected: Vec<usize> = stage_y.selected.iter().chain(&stage_t.selected).copied().collect();
    selected.sort_unstable();
    selected.dedup();

    Ok(RDEstimate {
        tau_hat: tau,
        se,
        ci_lower,
        ci_upper,
        level: cfg.level,
        h,
        b,
        lambda: stage_y.lambda,
        lambda_method: cfg.lambda_method,
        selected,
        n_eff: fit_y.n_eff,
        design: Design::Fuzzy,
        components: Some(FuzzyComponents { tau_y, tau_t, var_y, var_t, cov_yt }),
        se_degenerate: se == 0.0,
        bandwidths: BandwidthPlan {
            b,
            h,
            method: if cfg.bandwidth.is_some() { BandwidthMethod::Fixed } else { BandwidthMethod::Plugin },
            pilot: stage_y.pilot,
            final_diagnostics: final_diag,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceRow {
    pub index: usize,
    pub jump: f64,
    pub se: f64,
    pub p_value: f64,
    pub bandwidth: f64,
    pub bh_rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub fdr_level: f64,
    pub global_reject: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BalanceOptions {
    /// Use the pilot bandwidth of the outcome for every covariate.
    pub shared_bandwidth: bool,
    /// Restrict the tests to these covariates, e.g. the selected set.
    pub only: Option<Vec<usize>>,
}

/// Jump tests with each covariate as the outcome, Benjamini–Hochberg at level `q`.
pub fn balance_tests(data: &Dataset, cfg: &PipelineConfig, q: f64, opts: &BalanceOptions) -> Result<BalanceReport> {
    if data.p() == 0 {
        return Err(RdError::InvalidData("balance tests need at least one covariate".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(RdError::InvalidConfig(format!("FDR level must lie in (0, 1), got {q}")));
    }
    let kernel = cfg.kernel();
    let indices: Vec<usize> = match &opts.only {
        Some(list) => {
            crate::local_linear::validate_subset(list, data.p())?
        }
        None => (0..data.p()).collect(),
    };
    let shared = if opts.shared_bandwidth {
        Some(resolve_pilot(data, cfg, &kernel)?.0)
    } else {
        None
    };
    let tested: Vec<Result<(usize, f64, f64, f64)>> = indices
        .par_iter()
        .map(|&k| {
            let z = data.covariate(k);
            let h = match shared {
                Some(b) => b,
                None => plugin_bandwidth(data.x(), z, &kernel)?.bandwidth,
            };
            let fit = fit_outcome(data, z, &[], h, &kernel)?;
            let se = standard_error(&fit, data, &kernel, cfg.se_method)?;
            Ok((k, fit.tau(), se.se, h))
        })
        .collect();
    let tested = tested.into_iter().collect::<Result<Vec<_>>>()?;
    let p_values: Vec<f64> = tested
        .iter()
        .map(|&(_, jump, se, _)| if se > 0.0 { two_sided_p(jump / se) } else if jump == 0.0 { 1.0 } else { 0.0 })
        .collect();
    let rejected = benjamini_hochberg(&p_values, q);
    let rows: Vec<BalanceRow> = tested
        .iter()
        .zip(&p_values)
        .zip(&rejected)
        .map(|((&(index, jump, se, bandwidth), &p_value), &bh_rejected)| BalanceRow {
            index,
            jump,
            se,
            p_value,
            bandwidth,
            bh_rejected,
        })
        .collect();
    let global_reject = rejected.iter().any(|r| *r);
    Ok(BalanceReport { rows, fdr_level: q, global_reject })
}
