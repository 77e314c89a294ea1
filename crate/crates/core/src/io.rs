//! CSV ingestion, run configuration files, and report writers.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{RdError, Result};
use crate::inference::{BalanceReport, Design, PipelineConfig, RDEstimate};
use crate::simulation::McSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = RdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(OutputFormat::Text),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(RdError::InvalidConfig(format!("unknown format `{other}` (expected text, csv, or json)"))),
        }
    }
}

/// Which input columns hold what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub outcome: String,
    pub running: String,
    pub treatment: Option<String>,
    /// Covariates are the columns whose names start with this prefix.
    pub covariate_prefix: Option<String>,
    /// Explicit covariate list; takes precedence over the prefix.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            outcome: "y".into(),
            running: "x".into(),
            treatment: None,
            covariate_prefix: None,
            covariates: None,
        }
    }
}

/// Everything a command needs besides its own flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub columns: ColumnMap,
    /// Subtracted from the running variable at load time.
    pub cutoff: f64,
    pub format: OutputFormat,
    pub threads: Option<usize>,
    /// False discovery rate for balance tests.
    pub fdr: f64,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            columns: ColumnMap::default(),
            cutoff: 0.0,
            format: OutputFormat::Text,
            threads: None,
            fdr: 0.05,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| RdError::InvalidConfig(format!("config file: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RdError::Io(format!("cannot read config `{}`: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.cutoff.is_finite() {
            return Err(RdError::InvalidConfig("cutoff must be finite".into()));
        }
        if !(self.fdr > 0.0 && self.fdr < 1.0) {
            return Err(RdError::InvalidConfig(format!("fdr must lie in (0, 1), got {}", self.fdr)));
        }
        if self.threads == Some(0) {
            return Err(RdError::InvalidConfig("threads must be positive".into()));
        }
        self.pipeline.validate()
    }
}

/// A parsed input file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub data: Dataset,
    /// Rows dropped for a missing value in a mapped column.
    pub dropped: usize,
    pub covariate_names: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

/// Read a CSV file with a header row into a [`Dataset`].
pub fn load_csv(path: &Path, columns: &ColumnMap, cutoff: f64) -> Result<LoadedData> {
    let file = std::fs::File::open(path)
        .map_err(|e| RdError::Io(format!("cannot open `{}`: {e}", path.display())))?;
    load_csv_from_reader(file, columns, cutoff)
}

/// [`load_csv`] from any reader.
pub fn load_csv_from_reader<R: std::io::Read>(reader: R, columns: &ColumnMap, cutoff: f64) -> Result<LoadedData> {
    if !cutoff.is_finite() {
        return Err(RdError::InvalidConfig("cutoff must be finite".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |name: &str| position.get(name).copied().ok_or_else(|| RdError::MissingColumn(name.to_string()));

    let y_col = find(&columns.outcome)?;
    let x_col = find(&columns.running)?;
    let t_col = columns.treatment.as_deref().map(find).transpose()?;
    let reserved = [Some(y_col), Some(x_col), t_col];
    let z_cols: Vec<usize> = match (&columns.covariates, &columns.covariate_prefix) {
        (Some(list), _) => list.iter().map(|c| find(c)).collect::<Result<_>>()?,
        (None, Some(prefix)) => (0..headers.len())
            .filter(|&i| headers[i].starts_with(prefix.as_str()) && !reserved.contains(&Some(i)))
            .collect(),
        (None, None) => (0..headers.len()).filter(|&i| !reserved.contains(&Some(i))).collect(),
    };

    let mut mapped = vec![y_col, x_col];
    mapped.extend(t_col);
    mapped.extend(&z_cols);

    let (mut y, mut x, mut t, mut z) = (vec![], vec![], vec![], vec![]);
    let mut dropped = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // Header is line 1.
        let row = r + 2;
        if mapped.iter().any(|&c| record.get(c).is_none_or(is_missing)) {
            dropped += 1;
            continue;
        }
        let parse = |c: usize| -> Result<f64> {
            let cell = record.get(c).unwrap_or("");
            cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| RdError::NonNumericCell {
                row,
                column: headers[c].clone(),
                value: cell.to_string(),
            })
        };
        y.push(parse(y_col)?);
        x.push(parse(x_col)? - cutoff);
        if let Some(c) = t_col {
            t.push(parse(c)?);
        }
        for &c in &z_cols {
            z.push(parse(c)?);
        }
    }
    if y.is_empty() {
        return Err(RdError::EmptyAfterFiltering { dropped });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    let n = y.len();
    let z = DMatrix::from_row_slice(n, z_cols.len(), &z);
    let data = Dataset::new(y, x, z, t_col.map(|_| t))?;
    Ok(LoadedData { data, dropped, covariate_names: z_cols.iter().map(|&c| headers[c].clone()).collect() })
}

/// Render with six significant digits.
pub fn sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs().log10().floor() as i32;
    if (-4..=9).contains(&magnitude) {
        let decimals = (5 - magnitude).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.5e}")
    }
}

/// Flat result record shared by the `estimate` and `fuzzy` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub design: String,
    pub tau_hat: f64,
    pub se: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub level: f64,
    pub h: f64,
    pub b: f64,
    pub lambda: Option<f64>,
    pub lambda_method: String,
    pub n_selected: usize,
    pub selected_indices: Vec<usize>,
    pub selected_names: Vec<String>,
    pub n_eff: usize,
    pub n: usize,
    pub p: usize,
    pub dropped: usize,
    pub seed: u64,
    pub tau_y: Option<f64>,
    pub tau_t: Option<f64>,
}

impl EstimateReport {
    pub fn new(est: &RDEstimate, loaded: &LoadedData, seed: u64) -> Self {
        EstimateReport {
            design: match est.design {
                Design::Sharp => "sharp".into(),
                Design::Fuzzy => "fuzzy".into(),
            },
            tau_hat: est.tau_hat,
            se: est.se,
            ci_lower: est.ci_lower,
            ci_upper: est.ci_upper,
            level: est.level,
            h: est.h,
            b: est.b,
            lambda: est.lambda,
            lambda_method: est.lambda_method.label(),
            n_selected: est.selected.len(),
            selected_indices: est.selected.clone(),
            selected_names: est
                .selected
                .iter()
                .map(|&k| loaded.covariate_names.get(k).cloned().unwrap_or_else(|| format!("z{k}")))
                .collect(),
            n_eff: est.n_eff,
            n: loaded.data.n(),
            p: loaded.data.p(),
            dropped: loaded.dropped,
            seed,
            tau_y: est.components.map(|c| c.tau_y),
            tau_t: est.components.map(|c| c.tau_t),
        }
    }

    const FIELDS: [&'static str; 17] = [
        "design",
        "tau_hat",
        "se",
        "ci_lower",
        "ci_upper",
        "level",
        "h",
        "b",
        "lambda",
        "lambda_method",
        "n_selected",
        "selected_indices",
        "n_eff",
        "n",
        "p",
        "dropped",
        "seed",
    ];

    fn cells(&self, num: impl Fn(f64) -> String) -> Vec<String> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        vec![
            self.design.clone(),
            num(self.tau_hat),
            num(self.se),
            num(self.ci_lower),
            num(self.ci_upper),
            num(self.level),
            num(self.h),
            num(self.b),
            self.lambda.map_or_else(|| "NA".into(), &num),
            self.lambda_method.clone(),
            self.n_selected.to_string(),
            join(&self.selected_indices),
            self.n_eff.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            self.dropped.to_string(),
            self.seed.to_string(),
        ]
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Text => {
                let mut cells = self.cells(sig6);
                if !self.selected_names.is_empty() {
                    cells[11] = self.selected_names.join(", ");
                }
                let mut out = String::new();
                for (name, value) in Self::FIELDS.iter().zip(cells) {
                    out.push_str(&format!("{name:<17}{value}\n"));
                }
                if let (Some(ty), Some(tt)) = (self.tau_y, self.tau_t) {
                    out.push_str(&format!("{:<17}{}\n{:<17}{}\n", "tau_y", sig6(ty), "tau_t", sig6(tt)));
                }
                Ok(out)
            }
            OutputFormat::Csv => csv_string(&Self::FIELDS, &[self.cells(|v| v.to_string())]),
            OutputFormat::Json => to_json(self),
        }
    }
}

/// Bandwidths and penalty chosen without the final estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub b: f64,
    pub lambda: Option<f64>,
    pub lambda_method: String,
    pub h: f64,
    pub n_selected: usize,
    pub selected_indices: Vec<usize>,
    pub seed: u64,
}

impl TuneReport {
    const FIELDS: [&'static str; 7] = ["b", "lambda", "lambda_method", "h", "n_selected", "selected_indices", "seed"];

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        let cells = |num: &dyn Fn(f64) -> String| {
            vec![
                num(self.b),
                self.lambda.map_or_else(|| "NA".into(), num),
                self.lambda_method.clone(),
                num(self.h),
                self.n_selected.to_string(),
                self.selected_indices.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
                self.seed.to_string(),
            ]
        };
        match format {
            OutputFormat::Text => Ok(Self::FIELDS
                .iter()
                .zip(cells(&sig6))
                .map(|(k, v)| format!("{k:<17}{v}\n"))
                .collect()),
            OutputFormat::Csv => csv_string(&Self::FIELDS, &[cells(&|v: f64| v.to_string())]),
            OutputFormat::Json => to_json(self),
        }
    }
}

pub fn render_balance(report: &BalanceReport, names: &[String], format: OutputFormat) -> Result<String> {
    const FIELDS: [&str; 7] = ["index", "name", "jump", "se", "p_value", "bandwidth", "bh_rejected"];
    let rows = |num: &dyn Fn(f64) -> String| -> Vec<Vec<String>> {
        report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.index.to_string(),
                    names.get(r.index).cloned().unwrap_or_else(|| format!("z{}", r.index)),
                    num(r.jump),
                    num(r.se),
                    num(r.p_value),
                    num(r.bandwidth),
                    r.bh_rejected.to_string(),
                ]
            })
            .collect()
    };
    match format {
        OutputFormat::Text => {
            let mut out = format!("{:>6} {:<16} {:>12} {:>12} {:>12} {:>12} {:>8}\n", "index", "name", "jump", "se", "p_value", "bandwidth", "reject");
            for r in rows(&sig6) {
                out.push_str(&format!(
                    "{:>6} {:<16} {:>12} {:>12} {:>12} {:>12} {:>8}\n",
                    r[0], r[1], r[2], r[3], r[4], r[5], r[6]
                ));
            }
            out.push_str(&format!(
                "BH at q = {}: global null {}\n",
                sig6(report.fdr_level),
                if report.global_reject { "rejected" } else { "not rejected" }
            ));
            Ok(out)
        }
        OutputFormat::Csv => csv_string(&FIELDS, &rows(&|v: f64| v.to_string())),
        OutputFormat::Json => to_json(report),
    }
}

pub fn render_summary(summary: &McSummary, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Text => Ok(format!(
            "n = {}, p = {}, design = {:?}, replications = {}, seed = {}\n{}",
            summary.dgp.n,
            summary.dgp.p,
            summary.dgp.sparsity,
            summary.reps,
            summary.seed,
            summary.to_table()
        )),
        OutputFormat::Csv => summary.to_csv(),
        OutputFormat::Json => to_json(summary),
    }
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| RdError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| RdError::Io(e.to_string()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map(|s| s + "\n").map_err(|e| RdError::Io(e.to_string()))
}
