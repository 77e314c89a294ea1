use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rdlasso::inference::{balance_tests, select_covariates, BalanceOptions, SeMethod};
use rdlasso::io::{load_csv, render_balance, render_summary, EstimateReport, LoadedData, OutputFormat, RunConfig, TuneReport};
use rdlasso::simulation::{run_monte_carlo, standard_panel, DgpConfig, Estimator, McOptions, Sparsity};
use rdlasso::tuning::final_bandwidth;
use rdlasso::{estimate_fuzzy, estimate_sharp, KernelFamily, LambdaMethod, RdError};

/// Localized Lasso covariate selection and post-Lasso local linear estimation
/// for regression discontinuity designs.
///
/// Settings are resolved as command-line flags, then the `--config` file,
/// then built-in defaults.
#[derive(Debug, Parser)]
#[command(name = "rdlasso", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for simulations and balance tests.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output format: text, csv, or json.
    #[arg(long, global = true, value_name = "FORMAT")]
    format: Option<String>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sharp RD estimate with covariate selection.
    Estimate(DataArgs),
    /// Fuzzy RD estimate (requires --treatment).
    Fuzzy(DataArgs),
    /// Covariate balance tests with Benjamini–Hochberg control.
    Balance(BalanceArgs),
    /// Monte Carlo study on the simulation design.
    Simulate(SimulateArgs),
    /// Report the chosen bandwidths and penalty without estimating.
    Tune(DataArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    outcome: Option<String>,
    /// Running variable column.
    #[arg(long)]
    running: Option<String>,
    /// Observed treatment column (fuzzy designs).
    #[arg(long)]
    treatment: Option<String>,
    /// Use the columns whose names start with this prefix as covariates.
    #[arg(long, value_name = "PREFIX")]
    covariate_prefix: Option<String>,
    /// Comma-separated covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',', value_name = "COLS")]
    covariates: Option<Vec<String>>,
    /// Cutoff subtracted from the running variable.
    #[arg(long, allow_negative_numbers = true)]
    cutoff: Option<f64>,
    /// Kernel: triangular, epanechnikov, or uniform.
    #[arg(long)]
    kernel: Option<String>,
    /// Penalty rule: bch, lv, cv, inf, or a fixed non-negative value.
    #[arg(long, value_name = "METHOD")]
    lambda_method: Option<String>,
    /// Fixed pilot bandwidth for the selection step.
    #[arg(long, value_name = "B")]
    pilot_bandwidth: Option<f64>,
    /// Fixed bandwidth for the final estimate.
    #[arg(long, value_name = "H")]
    bandwidth: Option<f64>,
    /// Confidence level.
    #[arg(long)]
    level: Option<f64>,
    /// Standard error: plugin or sandwich.
    #[arg(long, value_name = "METHOD")]
    se_method: Option<String>,
    /// Add covariates that predict the treatment indicator.
    #[arg(long)]
    double_selection: bool,
    /// Seed for the randomized penalty rules (lv, cv).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BalanceArgs {
    #[command(flatten)]
    data: DataArgs,
    /// False discovery rate for the Benjamini–Hochberg step-up.
    #[arg(long)]
    fdr: Option<f64>,
    /// Only test the covariates selected for the outcome.
    #[arg(long)]
    selected_only: bool,
    /// Use the outcome's pilot bandwidth for every covariate.
    #[arg(long)]
    shared_bandwidth: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of replications.
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Master seed; replication seeds are derived from it.
    #[arg(long, default_value_t = 20_240_501)]
    seed: u64,
    /// Covariate design: sparse or nonsparse.
    #[arg(long, default_value = "sparse")]
    variant: String,
    /// Sample size per replication.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Number of covariates.
    #[arg(long, default_value_t = 200)]
    p: usize,
    /// Comma-separated estimators: cv, bch, lv, none, fixedK (e.g. fixed10), optimal.
    /// Defaults to the full comparison panel.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
}

/// Errors are either bad input (exit 1) or numerical failures (exit 2).
enum Failure {
    Config(String),
    Numeric(String),
}

impl From<RdError> for Failure {
    fn from(e: RdError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("hint: try a larger --pilot-bandwidth/--bandwidth or fewer covariates");
            ExitCode::from(2)
        }
    }
}

fn base_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(f) = &cli.format {
        cfg.format = f.parse()?;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn apply_data_args(cfg: &mut RunConfig, a: &DataArgs) -> Result<(), Failure> {
    if let Some(v) = &a.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = &a.outcome {
        cfg.columns.outcome = v.clone();
    }
    if let Some(v) = &a.running {
        cfg.columns.running = v.clone();
    }
    if let Some(v) = &a.treatment {
        cfg.columns.treatment = Some(v.clone());
    }
    if let Some(v) = &a.covariate_prefix {
        cfg.columns.covariate_prefix = Some(v.clone());
    }
    if let Some(v) = &a.covariates {
        cfg.columns.covariates = Some(v.clone());
    }
    if let Some(v) = a.cutoff {
        cfg.cutoff = v;
    }
    let p = &mut cfg.pipeline;
    if let Some(v) = &a.kernel {
        p.kernel = v.parse::<KernelFamily>()?;
    }
    if let Some(v) = &a.lambda_method {
        p.lambda_method = v.parse::<LambdaMethod>()?;
    }
    if a.pilot_bandwidth.is_some() {
        p.pilot_bandwidth = a.pilot_bandwidth;
    }
    if a.bandwidth.is_some() {
        p.bandwidth = a.bandwidth;
    }
    if let Some(v) = a.level {
        p.level = v;
    }
    if let Some(v) = &a.se_method {
        p.se_method = match v.to_ascii_lowercase().as_str() {
            "plugin" => SeMethod::Plugin,
            "sandwich" => SeMethod::Sandwich,
            other => return Err(config_err(format!("unknown SE method `{other}` (expected plugin or sandwich)"))),
        };
    }
    if a.double_selection {
        p.double_selection = true;
    }
    if let Some(s) = a.seed {
        p.tuning.rng_seed = s;
    }
    cfg.validate()?;
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<LoadedData, Failure> {
    let path = cfg.input.as_ref().ok_or_else(|| config_err("no input file (use --input or set `input` in the config)"))?;
    Ok(load_csv(path, &cfg.columns, cfg.cutoff)?)
}

fn install_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_err(format!("cannot start {n} threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<String, Failure> {
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::Estimate(a) | Command::Fuzzy(a) | Command::Tune(a) => {
            apply_data_args(&mut cfg, a)?;
            install_threads(cfg.threads)?;
            let loaded = load(&cfg)?;
            let seed = cfg.pipeline.tuning.rng_seed;
            match &cli.command {
                Command::Estimate(_) => {
                    let est = estimate_sharp(&loaded.data, &cfg.pipeline)?;
                    Ok(EstimateReport::new(&est, &loaded, seed).render(cfg.format)?)
                }
                Command::Fuzzy(_) => {
                    if loaded.data.t_obs().is_none() {
                        return Err(config_err("fuzzy estimation needs a treatment column (use --treatment)"));
                    }
                    let est = estimate_fuzzy(&loaded.data, &cfg.pipeline)?;
                    Ok(EstimateReport::new(&est, &loaded, seed).render(cfg.format)?)
                }
                _ => tune(&loaded, &cfg),
            }
        }
        Command::Balance(a) => {
            apply_data_args(&mut cfg, &a.data)?;
            if let Some(q) = a.fdr {
                cfg.fdr = q;
            }
            cfg.validate()?;
            install_threads(cfg.threads)?;
            let loaded = load(&cfg)?;
            let only = if a.selected_only {
                Some(select_covariates(&loaded.data, &cfg.pipeline)?.selected)
            } else {
                None
            };
            let opts = BalanceOptions { shared_bandwidth: a.shared_bandwidth, only };
            let report = balance_tests(&loaded.data, &cfg.pipeline, cfg.fdr, &opts)?;
            let mut out = render_balance(&report, &loaded.covariate_names, cfg.format)?;
            if cfg.format == OutputFormat::Text {
                out.push_str(&format!("seed = {}\n", cfg.pipeline.tuning.rng_seed));
            }
            Ok(out)
        }
        Command::Simulate(a) => {
            cfg.validate()?;
            install_threads(cfg.threads)?;
            simulate(a, &cfg)
        }
    }
}

fn tune(loaded: &LoadedData, cfg: &RunConfig) -> Result<String, Failure> {
    let data = &loaded.data;
    let stage = select_covariates(data, &cfg.pipeline)?;
    let h = match cfg.pipeline.bandwidth {
        Some(h) => h,
        None => final_bandwidth(data, &stage.selected, stage.b, &cfg.pipeline.kernel())?.bandwidth,
    };
    let report = TuneReport {
        b: stage.b,
        lambda: stage.lambda,
        lambda_method: cfg.pipeline.lambda_method.label(),
        h,
        n_selected: stage.selected.len(),
        selected_indices: stage.selected,
        seed: cfg.pipeline.tuning.rng_seed,
    };
    Ok(report.render(cfg.format)?)
}

fn parse_estimator(name: &str) -> Result<Estimator, Failure> {
    let key = name.trim().to_ascii_lowercase();
    let est = match key.as_str() {
        "cv" => Estimator::lasso("Lasso (CV)", LambdaMethod::Cv),
        "bch" => Estimator::lasso("Lasso (BCH)", LambdaMethod::Bch),
        "lv" => Estimator::lasso("Lasso (LV)", LambdaMethod::Lv),
        "none" => Estimator::first_k("No covariates", 0),
        "optimal" => Estimator::optimal("Optimal covariate"),
        _ => match key.strip_prefix("fixed").map(str::parse::<usize>) {
            Some(Ok(k)) => Estimator::first_k(&format!("Fixed {k}"), k),
            _ => {
                return Err(config_err(format!(
                    "unknown estimator `{name}` (expected cv, bch, lv, none, fixedK, or optimal)"
                )))
            }
        },
    };
    Ok(est)
}

fn simulate(a: &SimulateArgs, cfg: &RunConfig) -> Result<String, Failure> {
    let sparsity: Sparsity = a.variant.parse()?;
    let dgp = DgpConfig { n: a.n, p: a.p, sparsity, ..Default::default() };
    let estimators = match &a.estimators {
        Some(list) => list.iter().map(|s| parse_estimator(s)).collect::<Result<Vec<_>, _>>()?,
        None => standard_panel(),
    };
    let opts = McOptions { reps: a.reps, seed: a.seed, base: cfg.pipeline.clone() };
    let summary = run_monte_carlo(dgp, &estimators, &opts)?;
    Ok(render_summary(&summary, cfg.format)?)
}
