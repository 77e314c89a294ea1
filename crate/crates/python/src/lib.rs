//! Python bindings: datasets, pipeline configuration, sharp and fuzzy
//! estimation, balance tests, and the Monte Carlo harness.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rdlasso::inference::{self, BalanceOptions, Design, SeMethod};
use rdlasso::io::{self, ColumnMap};
use rdlasso::kernels::{BiasReading, Kernel};
use rdlasso::simulation::{self, DgpConfig, Dgp, Estimator, McOptions, Sparsity};
use rdlasso::{LambdaMethod, RdError};

fn to_py(e: RdError) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// A regression discontinuity sample with the cutoff at zero.
#[pyclass(name = "Dataset", module = "rdlasso_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: rdlasso::Dataset,
    names: Vec<String>,
}

#[pymethods]
impl PyDataset {
    /// `z` is a list of rows (n × p); `t` is the observed treatment for fuzzy designs.
    #[new]
    #[pyo3(signature = (y, x, z=None, t=None))]
    fn new(y: Vec<f64>, x: Vec<f64>, z: Option<Vec<Vec<f64>>>, t: Option<Vec<f64>>) -> PyResult<Self> {
        let rows = z.unwrap_or_default();
        let rows = if rows.is_empty() { vec![Vec::new(); y.len()] } else { rows };
        let p = rows.first().map_or(0, Vec::len);
        let inner = rdlasso::Dataset::from_rows(y, x, &rows, t).map_err(to_py)?;
        Ok(PyDataset { inner, names: (0..p).map(|k| format!("z{k}")).collect() })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn covariate_names(&self) -> Vec<String> {
        self.names.clone()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.y().to_vec()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, p={})", self.inner.n(), self.inner.p())
    }
}

/// Pipeline settings. Strings are parsed with the same rules as the CLI.
#[pyclass(name = "PipelineConfig", module = "rdlasso_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: inference::PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (
        kernel="triangular", lambda_method="bch", pilot_bandwidth=None, bandwidth=None,
        level=0.95, se_method="plugin", double_selection=false, seed=0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kernel: &str,
        lambda_method: &str,
        pilot_bandwidth: Option<f64>,
        bandwidth: Option<f64>,
        level: f64,
        se_method: &str,
        double_selection: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let mut inner = inference::PipelineConfig {
            kernel: kernel.parse().map_err(to_py)?,
            lambda_method: lambda_method.parse::<LambdaMethod>().map_err(to_py)?,
            pilot_bandwidth,
            bandwidth,
            level,
            se_method: match se_method {
                "plugin" => SeMethod::Plugin,
                "sandwich" => SeMethod::Sandwich,
                other => return Err(PyValueError::new_err(format!("unknown SE method `{other}`"))),
            },
            double_selection,
            ..Default::default()
        };
        inner.tuning.rng_seed = seed;
        inner.validate().map_err(to_py)?;
        Ok(PyConfig { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "PipelineConfig(kernel={}, lambda_method={}, level={})",
            self.inner.kernel,
            self.inner.lambda_method.label(),
            self.inner.level
        )
    }
}

/// Result of a sharp or fuzzy estimate.
#[pyclass(name = "Estimate", module = "rdlasso_py", frozen, get_all)]
struct PyEstimate {
    tau_hat: f64,
    se: f64,
    ci_lower: f64,
    ci_upper: f64,
    level: f64,
    h: f64,
    b: f64,
    lambda_: Option<f64>,
    lambda_method: String,
    selected: Vec<usize>,
    n_eff: usize,
    design: String,
    tau_y: Option<f64>,
    tau_t: Option<f64>,
}

#[pymethods]
impl PyEstimate {
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("tau_hat", self.tau_hat)?;
        d.set_item("se", self.se)?;
        d.set_item("ci_lower", self.ci_lower)?;
        d.set_item("ci_upper", self.ci_upper)?;
        d.set_item("level", self.level)?;
        d.set_item("h", self.h)?;
        d.set_item("b", self.b)?;
        d.set_item("lambda", self.lambda_)?;
        d.set_item("lambda_method", &self.lambda_method)?;
        d.set_item("n_selected", self.selected.len())?;
        d.set_item("selected_indices", self.selected.clone())?;
        d.set_item("n_eff", self.n_eff)?;
        d.set_item("design", &self.design)?;
        d.set_item("tau_y", self.tau_y)?;
        d.set_item("tau_t", self.tau_t)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Estimate(tau_hat={:.6}, se={:.6}, ci=({:.6}, {:.6}), n_selected={})",
            self.tau_hat,
            self.se,
            self.ci_lower,
            self.ci_upper,
            self.selected.len()
        )
    }
}

impl From<inference::RDEstimate> for PyEstimate {
    fn from(e: inference::RDEstimate) -> Self {
        PyEstimate {
            tau_hat: e.tau_hat,
            se: e.se,
            ci_lower: e.ci_lower,
            ci_upper: e.ci_upper,
            level: e.level,
            h: e.h,
            b: e.b,
            lambda_: e.lambda,
            lambda_method: e.lambda_method.label(),
            selected: e.selected,
            n_eff: e.n_eff,
            design: match e.design {
                Design::Sharp => "sharp".into(),
                Design::Fuzzy => "fuzzy".into(),
            },
            tau_y: e.components.map(|c| c.tau_y),
            tau_t: e.components.map(|c| c.tau_t),
        }
    }
}

fn config_or_default(config: Option<&PyConfig>) -> inference::PipelineConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Read a CSV file. Rows with a missing value in a used column are dropped.
#[pyfunction]
#[pyo3(signature = (path, outcome="y", running="x", treatment=None, covariate_prefix=None, covariates=None, cutoff=0.0))]
fn load_csv(
    path: &str,
    outcome: &str,
    running: &str,
    treatment: Option<String>,
    covariate_prefix: Option<String>,
    covariates: Option<Vec<String>>,
    cutoff: f64,
) -> PyResult<PyDataset> {
    let columns = ColumnMap {
        outcome: outcome.into(),
        running: running.into(),
        treatment,
        covariate_prefix,
        covariates,
    };
    let loaded = io::load_csv(std::path::Path::new(path), &columns, cutoff).map_err(to_py)?;
    Ok(PyDataset { inner: loaded.data, names: loaded.covariate_names })
}

/// Sharp RD estimate with localized-Lasso covariate selection.
#[pyfunction]
#[pyo3(signature = (data, config=None))]
fn estimate_sharp(py: Python<'_>, data: &PyDataset, config: Option<&PyConfig>) -> PyResult<PyEstimate> {
    let cfg = config_or_default(config);
    let inner = &data.inner;
    let est = py.detach(|| rdlasso::estimate_sharp(inner, &cfg)).map_err(to_py)?;
    Ok(est.into())
}

/// Fuzzy RD estimate: ratio of the outcome jump to the treatment jump.
#[pyfunction]
#[pyo3(signature = (data, config=None))]
fn estimate_fuzzy(py: Python<'_>, data: &PyDataset, config: Option<&PyConfig>) -> PyResult<PyEstimate> {
    let cfg = config_or_default(config);
    let inner = &data.inner;
    let est = py.detach(|| rdlasso::estimate_fuzzy(inner, &cfg)).map_err(to_py)?;
    Ok(est.into())
}

/// Balance tests for every covariate; returns one dict per covariate.
#[pyfunction]
#[pyo3(signature = (data, config=None, q=0.05, shared_bandwidth=false))]
fn balance_tests<'py>(
    py: Python<'py>,
    data: &PyDataset,
    config: Option<&PyConfig>,
    q: f64,
    shared_bandwidth: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config_or_default(config);
    let opts = BalanceOptions { shared_bandwidth, only: None };
    let inner = &data.inner;
    let report = py.detach(|| inference::balance_tests(inner, &cfg, q, &opts)).map_err(to_py)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("index", r.index)?;
            d.set_item("name", data.names.get(r.index).cloned())?;
            d.set_item("jump", r.jump)?;
            d.set_item("se", r.se)?;
            d.set_item("p_value", r.p_value)?;
            d.set_item("bandwidth", r.bandwidth)?;
            d.set_item("bh_rejected", r.bh_rejected)?;
            Ok(d)
        })
        .collect()
}

/// One draw from the simulation design.
#[pyfunction]
#[pyo3(signature = (seed, n=1000, p=200, variant="sparse"))]
fn generate(seed: u64, n: usize, p: usize, variant: &str) -> PyResult<PyDataset> {
    let sparsity: Sparsity = variant.parse().map_err(to_py)?;
    let dgp = Dgp::new(DgpConfig { n, p, sparsity, ..Default::default() }).map_err(to_py)?;
    let sample = dgp.generate(seed);
    Ok(PyDataset { inner: sample.data, names: (0..p).map(|k| format!("z{k}")).collect() })
}

fn estimator_from_name(name: &str) -> PyResult<Estimator> {
    Ok(match name {
        "cv" => Estimator::lasso("Lasso (CV)", LambdaMethod::Cv),
        "bch" => Estimator::lasso("Lasso (BCH)", LambdaMethod::Bch),
        "lv" => Estimator::lasso("Lasso (LV)", LambdaMethod::Lv),
        "none" => Estimator::first_k("No covariates", 0),
        "optimal" => Estimator::optimal("Optimal covariate"),
        other => match other.strip_prefix("fixed").map(str::parse::<usize>) {
            Some(Ok(k)) => Estimator::first_k(&format!("Fixed {k}"), k),
            _ => return Err(PyValueError::new_err(format!("unknown estimator `{other}`"))),
        },
    })
}

/// Monte Carlo summary; one dict per estimator with the table columns.
#[pyfunction]
#[pyo3(signature = (reps, seed, variant="sparse", n=1000, p=200, estimators=None))]
fn simulate<'py>(
    py: Python<'py>,
    reps: usize,
    seed: u64,
    variant: &str,
    n: usize,
    p: usize,
    estimators: Option<Vec<String>>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let sparsity: Sparsity = variant.parse().map_err(to_py)?;
    let panel = match estimators {
        Some(names) => names.iter().map(|s| estimator_from_name(s)).collect::<PyResult<Vec<_>>>()?,
        None => simulation::standard_panel(),
    };
    let opts = McOptions { reps, seed, ..Default::default() };
    let dgp = DgpConfig { n, p, sparsity, ..Default::default() };
    let summary = py.detach(|| simulation::run_monte_carlo(dgp, &panel, &opts)).map_err(to_py)?;
    summary
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("estimator", &r.estimator)?;
            d.set_item("n_cov_avg", r.n_cov_avg)?;
            d.set_item("bias", r.bias)?;
            d.set_item("sd", r.sd)?;
            d.set_item("avg_se", r.avg_se)?;
            d.set_item("ci_length_avg", r.ci_length_avg)?;
            d.set_item("coverage_pct", r.coverage_pct)?;
            d.set_item("failures", r.failures)?;
            d.set_item("seed", seed)?;
            Ok(d)
        })
        .collect()
}

/// Moments and bias/variance constants of a kernel.
#[pyfunction]
fn kernel_constants<'py>(py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyDict>> {
    let k = Kernel::from_name(name).map_err(to_py)?;
    let c = k.constants();
    let d = PyDict::new(py);
    d.set_item("kernel", k.family().name())?;
    d.set_item("right_moments", c.right.to_vec())?;
    d.set_item("right_sq_moments", c.sq_right.to_vec())?;
    d.set_item("bias_constant", k.bias_constant())?;
    d.set_item("bias_constant_amended", k.bias_constant_with(BiasReading::Amended))?;
    d.set_item("variance_constant", k.variance_constant())?;
    Ok(d)
}

/// Benjamini–Hochberg rejection flags at level `q`.
#[pyfunction]
fn benjamini_hochberg(p_values: Vec<f64>, q: f64) -> Vec<bool> {
    rdlasso::stats::benjamini_hochberg(&p_values, q)
}

/// Local linear jump at a fixed bandwidth with a fixed covariate subset.
#[pyfunction]
#[pyo3(signature = (data, h, subset=None, kernel="triangular"))]
fn fit_jump(data: &PyDataset, h: f64, subset: Option<Vec<usize>>, kernel: &str) -> PyResult<f64> {
    let k = Kernel::from_name(kernel).map_err(to_py)?;
    let subset = subset.unwrap_or_default();
    let fit = rdlasso::local_linear::fit_adjusted(&data.inner, &subset, h, &k).map_err(to_py)?;
    Ok(fit.tau())
}

/// Copy of `data` with its covariates replaced by `rows` (n × p).
#[pyfunction]
fn with_covariate_rows(data: &PyDataset, rows: Vec<Vec<f64>>) -> PyResult<PyDataset> {
    let n = data.inner.n();
    let p = rows.first().map_or(0, Vec::len);
    if rows.len() != n || rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("covariate rows must be n × p"));
    }
    let z = DMatrix::from_fn(n, p, |i, k| rows[i][k]);
    let inner = data.inner.with_covariates(z).map_err(to_py)?;
    Ok(PyDataset { inner, names: (0..p).map(|k| format!("z{k}")).collect() })
}

#[pymodule]
fn rdlasso_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_sharp, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_fuzzy, m)?)?;
    m.add_function(wrap_pyfunction!(balance_tests, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_constants, m)?)?;
    m.add_function(wrap_pyfunction!(benjamini_hochberg, m)?)?;
    m.add_function(wrap_pyfunction!(fit_jump, m)?)?;
    m.add_function(wrap_pyfunction!(with_covariate_rows, m)?)?;
    m.add("TRUE_TAU", simulation::TRUE_TAU)?;
    Ok(())
}
