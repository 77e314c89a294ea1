//! Monte Carlo design with many correlated covariates, and the harness that
//! runs a panel of estimators over replications and tabulates the results.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{RdError, Result};
use crate::inference::{estimate_sharp, post_selection_estimate, LambdaMethod, PipelineConfig};
use crate::stats::{mean, sample_sd};
use crate::tuning::plugin_bandwidth;

/// Jump of the conditional mean at the cutoff in the simulated design.
pub const TRUE_TAU: f64 = 0.02;

const CONTROL: [f64; 6] = [0.36, 0.96, 5.47, 15.28, 15.87, 5.14];
const TREATED: [f64; 6] = [0.38, 0.62, -2.84, 8.42, -10.24, 4.31];
const Z_SLOPE_CONTROL: f64 = 0.22;
const Z_SLOPE_TREATED: f64 = 0.28;
const NONSPARSE_COEF: f64 = 0.388_376_5;
const NONSPARSE_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sparsity {
    /// `αₖ = 2/k²`.
    #[default]
    Sparse,
    /// Equal coefficients on the first 50 covariates.
    Nonsparse,
}

impl std::str::FromStr for Sparsity {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sparse" => Ok(Sparsity::Sparse),
            "nonsparse" | "non-sparse" | "dense" => Ok(Sparsity::Nonsparse),
            other => Err(RdError::InvalidConfig(format!("unknown design `{other}` (expected sparse or nonsparse)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub n: usize,
    pub p: usize,
    pub sparsity: Sparsity,
    pub sigma_eps: f64,
    pub sigma_z: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig { n: 1000, p: 200, sparsity: Sparsity::Sparse, sigma_eps: 0.1295, sigma_z: 0.1353 }
    }
}

/// A prepared design: coefficients and the factor of the joint covariance of `(Z, ε)`.
#[derive(Debug, Clone)]
pub struct Dgp {
    cfg: DgpConfig,
    alpha: Vec<f64>,
    /// `Cov(εᵢ, Zᵢₖ)`.
    cov_eps_z: Vec<f64>,
    /// Standard deviation of `ε` given `Z`.
    cond_sd: f64,
}

/// One simulated sample.
#[derive(Debug, Clone)]
pub struct SimulatedSample {
    pub data: Dataset,
    pub tau: f64,
    /// `Zᵢᵀα`, the single covariate that captures all the covariate signal.
    pub optimal: Vec<f64>,
}

impl Dgp {
    /// Checks that the joint covariance of `(ε, Z)` is positive definite.
    ///
    /// With `Z` ordered first the covariance is `[[σ_Z² I, v], [vᵀ, σ_ε²]]`, whose
    /// Cholesky factor is `[[σ_Z I, 0], [vᵀ/σ_Z, s]]` with
    /// `s² = σ_ε² − ‖v‖²/σ_Z²`. Positive definiteness is `s² > 0`; sampling
    /// with this factor costs `O(p)` per row.
    pub fn new(cfg: DgpConfig) -> Result<Dgp> {
        if cfg.n == 0 {
            return Err(RdError::InvalidConfig("n must be positive".into()));
        }
        if cfg.sparsity == Sparsity::Nonsparse && cfg.p < NONSPARSE_COUNT {
            return Err(RdError::InvalidConfig(format!("the non-sparse design needs p >= {NONSPARSE_COUNT}")));
        }
        if !(cfg.sigma_eps > 0.0 && cfg.sigma_z > 0.0) {
            return Err(RdError::InvalidConfig("standard deviations must be positive".into()));
        }
        let var_eps = cfg.sigma_eps * cfg.sigma_eps;
        let cov_eps_z: Vec<f64> = (1..=cfg.p)
            .map(|k| 0.8 * 6f64.sqrt() * var_eps / (std::f64::consts::PI * k as f64))
            .collect();
        let schur = var_eps - cov_eps_z.iter().map(|v| v * v).sum::<f64>() / (cfg.sigma_z * cfg.sigma_z);
        if schur <= 0.0 {
            return Err(RdError::NotPositiveDefinite);
        }
        let alpha = (1..=cfg.p)
            .map(|k| match cfg.sparsity {
                Sparsity::Sparse => 2.0 / (k * k) as f64,
                Sparsity::Nonsparse if k <= NONSPARSE_COUNT => NONSPARSE_COEF,
                Sparsity::Nonsparse => 0.0,
            })
            .collect();
        Ok(Dgp { cfg, alpha, cov_eps_z, cond_sd: schur.sqrt() })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// The full covariance of `(ε, Z₁, …, Z_p)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.cfg.p;
        let mut s = DMatrix::zeros(p + 1, p + 1);
        s[(0, 0)] = self.cfg.sigma_eps.powi(2);
        for k in 0..p {
            s[(0, k + 1)] = self.cov_eps_z[k];
            s[(k + 1, 0)] = self.cov_eps_z[k];
            s[(k + 1, k + 1)] = self.cfg.sigma_z.powi(2);
        }
        s
    }

    /// `E[Y | X = x, Z = 0]` on the control or treated side.
    pub fn mean_function(x: f64, treated: bool) -> f64 {
        let c = if treated { &TREATED } else { &CONTROL };
        c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    pub fn generate(&self, seed: u64) -> SimulatedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, p) = (self.cfg.n, self.cfg.p);
        let g2 = Gamma::new(2.0, 1.0).expect("valid shape");
        let g4 = Gamma::new(4.0, 1.0).expect("valid shape");
        let sz = self.cfg.sigma_z;

        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut optimal = Vec::with_capacity(n);
        let mut z = DMatrix::<f64>::zeros(n, p);
        for i in 0..n {
            let a: f64 = g2.sample(&mut rng);
            let b: f64 = g4.sample(&mut rng);
            let xi = 2.0 * a / (a + b) - 1.0;
            let mut eps = 0.0;
            let mut za = 0.0;
            for k in 0..p {
                let u: f64 = rng.sample(StandardNormal);
                let zk = sz * u;
                z[(i, k)] = zk;
                eps += self.cov_eps_z[k] / sz * u;
                za += zk * self.alpha[k];
            }
            let e: f64 = rng.sample(StandardNormal);
            eps += self.cond_sd * e;
            let treated = xi >= 0.0;
            let slope = if treated { Z_SLOPE_TREATED } else { Z_SLOPE_CONTROL };
            y.push(Dgp::mean_function(xi, treated) + slope * za + eps);
            x.push(xi);
            optimal.push(za);
        }
        let data = Dataset::new(y, x, z, None).expect("simulated data are finite");
        SimulatedSample { data, tau: TRUE_TAU, optimal }
    }
}

/// Seed of replication `rep` derived from a master seed (SplitMix64 finalizer).
pub fn derive_seed(master: u64, rep: u64) -> u64 {
    let mut z = master ^ rep.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    /// Full two-step pipeline with the given configuration.
    Pipeline(PipelineConfig),
    /// The first `k` covariates, no selection. `k = 0` is the estimator without covariates.
    FirstK(usize),
    /// The infeasible single covariate `Zᵀα`.
    Optimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub label: String,
    pub kind: EstimatorKind,
}

impl Estimator {
    pub fn lasso(label: &str, method: LambdaMethod) -> Self {
        let cfg = PipelineConfig { lambda_method: method, ..Default::default() };
        Estimator { label: label.into(), kind: EstimatorKind::Pipeline(cfg) }
    }

    pub fn first_k(label: &str, k: usize) -> Self {
        Estimator { label: label.into(), kind: EstimatorKind::FirstK(k) }
    }

    pub fn optimal(label: &str) -> Self {
        Estimator { label: label.into(), kind: EstimatorKind::Optimal }
    }
}

/// The nine estimators of the standard comparison, in table order.
pub fn standard_panel() -> Vec<Estimator> {
    vec![
        Estimator::lasso("Lasso (CV)", LambdaMethod::Cv),
        Estimator::lasso("Lasso (BCH)", LambdaMethod::Bch),
        Estimator::lasso("Lasso (LV)", LambdaMethod::Lv),
        Estimator::first_k("No covariates", 0),
        Estimator::first_k("Fixed 1", 1),
        Estimator::first_k("Fixed 10", 10),
        Estimator::first_k("Fixed 30", 30),
        Estimator::first_k("Fixed 50", 50),
        Estimator::optimal("Optimal covariate"),
    ]
}

/// One estimator's result on one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepOutcome {
    pub tau_hat: f64,
    pub se: f64,
    pub n_cov: usize,
    pub covered: bool,
    pub ci_length: f64,
}

fn run_estimator(est: &Estimator, sample: &SimulatedSample, seed: u64, base: &PipelineConfig) -> Result<RepOutcome> {
    let data = &sample.data;
    let estimate = match &est.kind {
        EstimatorKind::Pipeline(cfg) => {
            let mut cfg = cfg.clone();
            cfg.tuning.rng_seed = seed;
            estimate_sharp(data, &cfg)?
        }
        EstimatorKind::FirstK(k) => {
            if *k > data.p() {
                return Err(RdError::InvalidConfig(format!("fixed set of {k} covariates but p = {}", data.p())));
            }
            let b = plugin_bandwidth(data.x(), data.y(), &base.kernel())?.bandwidth;
            let subset: Vec<usize> = (0..*k).collect();
            post_selection_estimate(data, &subset, b, None, None, base)?
        }
        EstimatorKind::Optimal => {
            let z = DMatrix::from_column_slice(data.n(), 1, &sample.optimal);
            let single = data.with_covariates(z)?;
            let b = plugin_bandwidth(data.x(), data.y(), &base.kernel())?.bandwidth;
            post_selection_estimate(&single, &[0], b, None, None, base)?
        }
    };
    Ok(RepOutcome {
        tau_hat: estimate.tau_hat,
        se: estimate.se,
        n_cov: estimate.selected.len(),
        covered: estimate.covers(sample.tau),
        ci_length: estimate.ci_upper - estimate.ci_lower,
    })
}

/// Summary statistics of one estimator across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McRow {
    pub estimator: String,
    pub n_cov_avg: f64,
    pub bias: f64,
    pub sd: f64,
    pub avg_se: f64,
    pub ci_length_avg: f64,
    pub coverage_pct: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub dgp: DgpConfig,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<McRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    pub reps: usize,
    pub seed: u64,
    /// Settings shared by the fixed-set estimators (kernel, level, SE method).
    pub base: PipelineConfig,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { reps: 1000, seed: 20_240_501, base: PipelineConfig::default() }
    }
}

/// Per-replication outcomes, indexed `[rep][estimator]`; failures are `None`.
pub fn simulate_outcomes(dgp: &Dgp, estimators: &[Estimator], opts: &McOptions) -> Vec<Vec<Option<RepOutcome>>> {
    (0..opts.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(opts.seed, rep);
            let sample = dgp.generate(seed);
            estimators
                .iter()
                .map(|est| match run_estimator(est, &sample, seed, &opts.base) {
                    Ok(o) => Some(o),
                    Err(e) => {
                        log::debug!("replication {rep}, {}: {e}", est.label);
                        None
                    }
                })
                .collect()
        })
        .collect()
}

pub fn summarize(estimators: &[Estimator], outcomes: &[Vec<Option<RepOutcome>>], tau: f64) -> Vec<McRow> {
    estimators
        .iter()
        .enumerate()
        .map(|(j, est)| {
            let ok: Vec<RepOutcome> = outcomes.iter().filter_map(|rep| rep[j]).collect();
            let failures = outcomes.len() - ok.len();
            if failures > 0 {
                log::warn!("{}: {failures} of {} replications failed", est.label, outcomes.len());
            }
            let taus: Vec<f64> = ok.iter().map(|o| o.tau_hat).collect();
            let pct = |count: usize| 100.0 * count as f64 / ok.len() as f64;
            McRow {
                estimator: est.label.clone(),
                n_cov_avg: mean(&ok.iter().map(|o| o.n_cov as f64).collect::<Vec<_>>()),
                bias: mean(&taus) - tau,
                sd: sample_sd(&taus),
                avg_se: mean(&ok.iter().map(|o| o.se).collect::<Vec<_>>()),
                ci_length_avg: mean(&ok.iter().map(|o| o.ci_length).collect::<Vec<_>>()),
                coverage_pct: pct(ok.iter().filter(|o| o.covered).count()),
                successes: ok.len(),
                failures,
            }
        })
        .collect()
}

pub fn run_monte_carlo(dgp_cfg: DgpConfig, estimators: &[Estimator], opts: &McOptions) -> Result<McSummary> {
    if opts.reps == 0 {
        return Err(RdError::InvalidConfig("replications must be positive".into()));
    }
    opts.base.validate()?;
    let dgp = Dgp::new(dgp_cfg)?;
    let outcomes = simulate_outcomes(&dgp, estimators, opts);
    Ok(McSummary { dgp: dgp_cfg, reps: opts.reps, seed: opts.seed, rows: summarize(estimators, &outcomes, TRUE_TAU) })
}

const HEADER: [&str; 7] = ["Estimator", "#Cov", "Bias", "SD", "Avg SE", "CI Length", "Coverage"];

impl McSummary {
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.estimator.len()).max().unwrap_or(0).max(HEADER[0].len());
        let mut out = format!("{:<width$}", HEADER[0]);
        for h in &HEADER[1..] {
            out.push_str(&format!(" {h:>10}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:<width$} {:>10.1} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.1}\n",
                r.estimator, r.n_cov_avg, r.bias, r.sd, r.avg_se, r.ci_length_avg, r.coverage_pct
            ));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER.iter().copied().chain(["Failures", "Reps", "Seed"]))?;
        for r in &self.rows {
            w.write_record([
                r.estimator.clone(),
                r.n_cov_avg.to_string(),
                r.bias.to_string(),
                r.sd.to_string(),
                r.avg_se.to_string(),
                r.ci_length_avg.to_string(),
                r.coverage_pct.to_string(),
                r.failures.to_string(),
                self.reps.to_string(),
                self.seed.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| RdError::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| RdError::Io(e.to_string()))
    }

    pub fn row(&self, label: &str) -> Option<&McRow> {
        self.rows.iter().find(|r| r.estimator == label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jump_of_mean_function() {
        let tau = Dgp::mean_function(0.0, true) - Dgp::mean_function(0.0, false);
        assert!((tau - TRUE_TAU).abs() < 1e-15);
        assert!((Dgp::mean_function(1.0, false) - CONTROL.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn default_covariance_is_positive_definite() {
        let dgp = Dgp::new(DgpConfig::default()).unwrap();
        assert!(dgp.covariance().cholesky().is_some());
        let bad = DgpConfig { sigma_z: 0.01, ..Default::default() };
        assert_eq!(Dgp::new(bad).unwrap_err(), RdError::NotPositiveDefinite);
    }

    #[test]
    fn generation_is_reproducible() {
        let dgp = Dgp::new(DgpConfig { n: 50, p: 5, ..Default::default() }).unwrap();
        let a = dgp.generate(7);
        let b = dgp.generate(7);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, dgp.generate(8).data);
        assert!(a.data.x().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn nonsparse_needs_fifty_covariates() {
        let cfg = DgpConfig { p: 20, sparsity: Sparsity::Nonsparse, ..Default::default() };
        assert!(Dgp::new(cfg).is_err());
    }

    #[test]
    fn seeds_differ_across_reps() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(9, 3), derive_seed(9, 3));
    }
}
