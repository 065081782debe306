//! Command-line front end. Exit codes: 0 ok, 2 input or validation, 3 numeric
//! or estimation failure, 4 configuration.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ltate_core::dataset::{self, Warning};
use ltate_core::dgp;
use ltate_core::efficiency::{self, Perturbation};
use ltate_core::estimators::{run_estimators, EstimateReport};
use ltate_core::nuisance::ProbabilityLearner;
use ltate_core::{EstimatorKind, ModelKind, PiMode, Target};
use serde::Serialize;

use crate::config::{self, ConfigError, Overrides, RunConfig};
use crate::io::{self, IoError};
use crate::parallel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ltate", version, about = "Long-term treatment effects from combined experimental and observational data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the long-term effect from a CSV file.
    Estimate(EstimateArgs),
    /// Draw a dataset from the linear-Gaussian generator.
    Simulate(SimulateArgs),
    /// Monte Carlo efficiency bound under the generator.
    Bound(BoundArgs),
    /// Finite-difference orthogonality audit of the moments.
    Audit(AuditArgs),
    /// Monte Carlo experiment grid.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML or JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub target: Option<Target>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of cross-fitting folds.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub clip_eps: Option<f64>,
    /// Fixed sieve degree for every nuisance fit.
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// `logistic` or `least_squares`.
    #[arg(long, value_parser = parse_learner)]
    pub propensity: Option<ProbabilityLearner>,
    #[arg(long)]
    pub logistic_max_iter: Option<usize>,
    #[arg(long)]
    pub logistic_tol: Option<f64>,
    /// `per_fold` or `global`.
    #[arg(long, value_parser = parse_pi_mode)]
    pub pi_mode: Option<PiMode>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// JSON output path (standard output when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Estimator names or aliases, comma separated or repeated.
    #[arg(long = "estimator", value_delimiter = ',')]
    pub estimators: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub phi: Option<f64>,
    /// Observed dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Hidden potential-outcome table CSV.
    #[arg(long)]
    pub potential: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub n_draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub n_draws: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    /// `component[:mode[:shape[:scale]]]`, repeatable; all terms move together.
    #[arg(long = "perturb", value_parser = config::parse_perturbation)]
    pub perturb: Vec<Perturbation>,
    /// Also write `moment, direction, derivative, se` rows here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',')]
    pub phis: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "estimator", value_delimiter = ',')]
    pub estimators: Vec<String>,
    /// One row per cell.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Long-format table (`estimator, phi, n, metric, value`).
    #[arg(long)]
    pub long: Option<PathBuf>,
}

fn parse_learner(s: &str) -> Result<ProbabilityLearner, String> {
    match s {
        "logistic" => Ok(ProbabilityLearner::Logistic),
        "least_squares" | "ls" => Ok(ProbabilityLearner::LeastSquares),
        other => Err(format!("unknown propensity learner `{other}`")),
    }
}

fn parse_pi_mode(s: &str) -> Result<PiMode, String> {
    match s {
        "per_fold" => Ok(PiMode::PerFold),
        "global" => Ok(PiMode::Global),
        other => Err(format!("unknown pi mode `{other}`")),
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl ToString) -> Self {
        Failure { code, message: message.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e)
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::new(EXIT_INPUT, e)
    }
}

fn resolve(common: &CommonArgs, extra: Overrides) -> Result<RunConfig, Failure> {
    let base = match &common.config {
        Some(p) => config::load_file(p)?,
        None => RunConfig::default(),
    };
    let o = Overrides {
        model: common.model,
        target: common.target,
        k: common.k,
        alpha: common.alpha,
        seed: common.seed,
        pi_mode: common.pi_mode,
        workers: common.workers,
        clip_eps: common.clip_eps,
        degree: common.degree,
        ridge: common.ridge,
        propensity: common.propensity,
        logistic_max_iter: common.logistic_max_iter,
        logistic_tol: common.logistic_tol,
        ..extra
    };
    Ok(base.resolve(&o)?)
}

fn non_empty(v: &[String]) -> Option<Vec<String>> {
    (!v.is_empty()).then(|| v.to_vec())
}

#[derive(Serialize)]
#[serde(untagged)]
enum EstimateEntry {
    Ok { estimator: EstimatorKind, report: EstimateReport },
    Err { estimator: EstimatorKind, error: String },
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    input: String,
    n: usize,
    warnings: Vec<Warning>,
    results: Vec<EstimateEntry>,
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let extra = Overrides { estimators: non_empty(&args.estimators), ..Overrides::default() };
    let mut cfg = resolve(&args.common, extra)?;
    let mut kinds = cfg.estimator_kinds()?;
    if kinds.is_empty() {
        kinds = vec![EstimatorKind::dml_for(cfg.model)];
        cfg.estimators = kinds.iter().map(|k| k.name().to_string()).collect();
    }
    let ds = io::read_dataset(&args.input, cfg.model)?;
    let warnings = dataset::validate(&ds, cfg.learner.clip_eps);
    let results = run_estimators(&ds, &kinds, cfg.target, &cfg.estimate_options());
    let mut first_error = None;
    let entries = kinds
        .iter()
        .zip(results)
        .map(|(&estimator, r)| match r {
            Ok(report) => EstimateEntry::Ok { estimator, report },
            Err(e) => {
                let msg = format!("{estimator}: {e}");
                first_error.get_or_insert(msg);
                EstimateEntry::Err { estimator, error: e.to_string() }
            }
        })
        .collect();
    let out = EstimateOutput {
        command: "estimate",
        config: &cfg,
        input: args.input.display().to_string(),
        n: ds.n(),
        warnings,
        results: entries,
    };
    io::write_json(args.common.out.as_deref(), &out)?;
    match first_error {
        Some(msg) => Err(Failure::new(EXIT_ESTIMATION, msg)),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct McTau {
    mean: f64,
    se: f64,
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    data: String,
    n: usize,
    true_tau: f64,
    group_share: f64,
    mc_tau1: McTau,
    mc_tau0: McTau,
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let extra = Overrides { n: args.n, phi: args.phi, ..Overrides::default() };
    let cfg = resolve(&args.common, extra)?;
    let spec = cfg.spec();
    let sample = dgp::sample(&spec, cfg.simulate.n, cfg.model).map_err(|e| match e {
        dgp::DgpError::InvalidSpec(_) => Failure::new(EXIT_CONFIG, e),
        dgp::DgpError::Dataset(_) => Failure::new(EXIT_INPUT, e),
    })?;
    io::write_dataset(&args.data, &sample.dataset)?;
    if let Some(p) = &args.potential {
        let (h, rows) = sample.potential.to_table();
        io::write_table_file(p, &h, &rows)?;
    }
    let (m1, s1) = sample.potential.mc_tau(Target::Tau1);
    let (m0, s0) = sample.potential.mc_tau(Target::Tau0);
    let out = SimulateOutput {
        command: "simulate",
        config: &cfg,
        data: args.data.display().to_string(),
        n: sample.dataset.n(),
        true_tau: spec.true_tau(),
        group_share: sample.dataset.group_share(),
        mc_tau1: McTau { mean: m1, se: s1 },
        mc_tau0: McTau { mean: m0, se: s0 },
    };
    io::write_json(args.common.out.as_deref(), &out)?;
    Ok(())
}

fn efficiency_failure(e: efficiency::EfficiencyError) -> Failure {
    match e {
        efficiency::EfficiencyError::InvalidSpec(_)
        | efficiency::EfficiencyError::ComponentMismatch { .. }
        | efficiency::EfficiencyError::TooFewDraws => Failure::new(EXIT_CONFIG, e),
        _ => Failure::new(EXIT_ESTIMATION, e),
    }
}

#[derive(Serialize)]
struct BoundOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    report: efficiency::BoundReport,
}

pub fn cmd_bound(args: &BoundArgs) -> Result<(), Failure> {
    let extra = Overrides { phi: args.phi, n_draws: args.n_draws, ..Overrides::default() };
    let cfg = resolve(&args.common, extra)?;
    let report = parallel::compute_bound(&cfg.spec(), cfg.target, cfg.model, cfg.bound.n_draws, cfg.seed, cfg.workers)
        .map_err(efficiency_failure)?;
    io::write_json(args.common.out.as_deref(), &BoundOutput { command: "bound", config: &cfg, report })?;
    Ok(())
}

#[derive(Serialize)]
struct AuditOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    results: Vec<efficiency::AuditResult>,
}

pub fn cmd_audit(args: &AuditArgs) -> Result<(), Failure> {
    let extra = Overrides {
        phi: args.phi,
        n_draws: args.n_draws,
        step: args.step,
        direction: (!args.perturb.is_empty()).then(|| args.perturb.clone()),
        ..Overrides::default()
    };
    let cfg = resolve(&args.common, extra)?;
    let results = efficiency::audit_orthogonality(&cfg.spec(), cfg.model, &cfg.audit.direction, &cfg.audit_options())
        .map_err(efficiency_failure)?;
    if let Some(p) = &args.csv {
        let (h, rows) = io::audit_table(&results);
        io::write_table_file(p, &h, &rows)?;
    }
    io::write_json(args.common.out.as_deref(), &AuditOutput { command: "audit", config: &cfg, results })?;
    Ok(())
}

#[derive(Serialize)]
struct GridOutput<'a> {
    command: &'static str,
    config: &'a RunConfig,
    cells: Vec<ltate_core::harness::CellResult>,
}

pub fn cmd_grid(args: &GridArgs) -> Result<(), Failure> {
    let extra = Overrides {
        phis: args.phis.clone(),
        sizes: args.sizes.clone(),
        reps: args.reps,
        estimators: non_empty(&args.estimators),
        ..Overrides::default()
    };
    let mut cfg = resolve(&args.common, extra)?;
    let grid = cfg.experiment_grid()?;
    cfg.estimators = grid.estimators.iter().map(|k| k.name().to_string()).collect();
    let cells = parallel::run_grid(&grid, cfg.workers).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    if let Some(p) = &args.csv {
        let (h, rows) = io::cells_table(&cells);
        io::write_table_file(p, &h, &rows)?;
    }
    if let Some(p) = &args.long {
        let (h, rows) = io::cells_long_table(&cells);
        io::write_table_file(p, &h, &rows)?;
    }
    io::write_json(args.common.out.as_deref(), &GridOutput { command: "grid", config: &cfg, cells })?;
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bound(a) => cmd_bound(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Grid(a) => cmd_grid(a),
    }
}

/// Parses arguments, runs the command, prints a one-line diagnostic on
/// failure and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message.replace('\n', " "));
            f.code
        }
    }
}
