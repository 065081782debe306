//! Run configuration: file defaults, command-line overrides, and resolution
//! into the core crate's option types.

use std::path::Path;

use ltate_core::crossfit::DEFAULT_FOLDS;
use ltate_core::efficiency::{AuditMoment, AuditOptions, Component, Mode, Perturbation, Shape, DEFAULT_STEP};
use ltate_core::estimators::{EstimateOptions, DEFAULT_ALPHA};
use ltate_core::harness::ExperimentGrid;
use ltate_core::nuisance::{DegreeRule, ProbabilityLearner};
use ltate_core::{DgpSpec, EstimatorKind, LearnerConfig, ModelKind, PiMode, Target};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { n: 4000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    pub n_draws: usize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig { n_draws: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub n_draws: usize,
    pub step: f64,
    pub direction: Vec<Perturbation>,
    /// Empty: the efficient moment and the model's weighting moment.
    pub moments: Vec<AuditMoment>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            n_draws: 200_000,
            step: DEFAULT_STEP,
            direction: vec![Perturbation::new(Component::Rho1, Shape::Constant, Mode::Multiplicative)],
            moments: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub phis: Vec<f64>,
    pub sizes: Vec<usize>,
    pub reps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { phis: vec![0.0, 0.5, 0.66], sizes: vec![4000], reps: 100 }
    }
}

/// Everything a command needs. Serialized back into every JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub target: Target,
    /// Names or aliases (`dml`, `weight`, `or_obs`, `or_exp`, `diff_means`).
    pub estimators: Vec<String>,
    pub k: usize,
    pub alpha: f64,
    /// Seeds folds, simulation and Monte Carlo draws.
    pub seed: u64,
    pub pi_mode: PiMode,
    pub workers: usize,
    pub learner: LearnerConfig,
    /// Generator; defaults to the model's default spec.
    pub dgp: Option<DgpSpec>,
    pub simulate: SimulateConfig,
    pub bound: BoundConfig,
    pub audit: AuditConfig,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::LatentUnconfounded,
            target: Target::Tau1,
            estimators: Vec::new(),
            k: DEFAULT_FOLDS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            pi_mode: PiMode::PerFold,
            workers: 1,
            learner: LearnerConfig::default(),
            dgp: None,
            simulate: SimulateConfig::default(),
            bound: BoundConfig::default(),
            audit: AuditConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub target: Option<Target>,
    pub estimators: Option<Vec<String>>,
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub pi_mode: Option<PiMode>,
    pub workers: Option<usize>,
    pub clip_eps: Option<f64>,
    pub degree: Option<usize>,
    pub ridge: Option<f64>,
    pub propensity: Option<ProbabilityLearner>,
    pub logistic_max_iter: Option<usize>,
    pub logistic_tol: Option<f64>,
    pub n: Option<usize>,
    pub phi: Option<f64>,
    pub n_draws: Option<usize>,
    pub step: Option<f64>,
    pub direction: Option<Vec<Perturbation>>,
    pub phis: Option<Vec<f64>>,
    pub sizes: Option<Vec<usize>>,
    pub reps: Option<usize>,
}

pub fn load_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
    let parse_err = |message: String| ConfigError::Parse { path: path.display().to_string(), message };
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| parse_err(e.to_string())),
        _ => toml::from_str(&text).map_err(|e| parse_err(e.to_string())),
    }
}

impl RunConfig {
    /// Applies overrides and fills derived defaults; the result is what every command echoes.
    pub fn resolve(mut self, o: &Overrides) -> Result<RunConfig, ConfigError> {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(self.model, o.model);
        set!(self.target, o.target);
        set!(self.estimators, o.estimators);
        set!(self.k, o.k);
        set!(self.alpha, o.alpha);
        set!(self.seed, o.seed);
        set!(self.pi_mode, o.pi_mode);
        set!(self.workers, o.workers);
        set!(self.learner.clip_eps, o.clip_eps);
        set!(self.learner.ridge_lambda, o.ridge);
        set!(self.learner.propensity_learner, o.propensity);
        set!(self.learner.logistic.max_iter, o.logistic_max_iter);
        set!(self.learner.logistic.tol, o.logistic_tol);
        if let Some(j) = o.degree {
            self.learner.outcome_degree = DegreeRule::Fixed(j);
            self.learner.propensity_degree = DegreeRule::Fixed(j);
        }
        set!(self.simulate.n, o.n);
        if let Some(n) = o.n_draws {
            self.bound.n_draws = n;
            self.audit.n_draws = n;
        }
        set!(self.audit.step, o.step);
        set!(self.audit.direction, o.direction);
        set!(self.grid.phis, o.phis);
        set!(self.grid.sizes, o.sizes);
        set!(self.grid.reps, o.reps);

        let mut spec = self.dgp.take().unwrap_or_else(|| DgpSpec::default_for(self.model));
        if let Some(phi) = o.phi {
            spec.phi = phi;
        }
        spec.seed = self.seed;
        self.dgp = Some(spec);
        self.estimators = self.estimator_kinds()?.iter().map(|k| k.name().to_string()).collect();
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.k < 2 {
            return invalid(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.learner.clip_eps > 0.0 && self.learner.clip_eps < 0.5) {
            return invalid(format!("clip_eps must lie in (0, 0.5), got {}", self.learner.clip_eps));
        }
        if !(self.learner.ridge_lambda >= 0.0) {
            return invalid("ridge lambda must be non-negative");
        }
        if self.workers == 0 {
            return invalid("workers must be at least 1");
        }
        self.spec().validate(self.model).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn spec(&self) -> DgpSpec {
        self.dgp.clone().unwrap_or_else(|| DgpSpec::default_for(self.model))
    }

    /// Estimator names resolved against the model; empty means the command's default.
    pub fn estimator_kinds(&self) -> Result<Vec<EstimatorKind>, ConfigError> {
        self.estimators.iter().map(|name| parse_estimator(name, self.model)).collect()
    }

    pub fn estimate_options(&self) -> EstimateOptions {
        EstimateOptions { k: self.k, alpha: self.alpha, seed: self.seed, pi_mode: self.pi_mode, learner: self.learner }
    }

    pub fn audit_options(&self) -> AuditOptions {
        let moments = if self.audit.moments.is_empty() {
            AuditMoment::defaults(self.model).to_vec()
        } else {
            self.audit.moments.clone()
        };
        AuditOptions { target: self.target, moments, step: self.audit.step, n_draws: self.audit.n_draws, seed: self.seed }
    }

    pub fn experiment_grid(&self) -> Result<ExperimentGrid, ConfigError> {
        let mut estimators = self.estimator_kinds()?;
        if estimators.is_empty() {
            estimators = default_grid_estimators(self.model);
        }
        Ok(ExperimentGrid {
            spec: self.spec(),
            model: self.model,
            target: self.target,
            phis: self.grid.phis.clone(),
            sizes: self.grid.sizes.clone(),
            reps: self.grid.reps,
            estimators,
            alpha: self.alpha,
            seed: self.seed,
            options: self.estimate_options(),
            share_substreams: false,
        })
    }
}

pub fn default_grid_estimators(model: ModelKind) -> Vec<EstimatorKind> {
    use EstimatorKind::*;
    match model {
        ModelKind::LatentUnconfounded => vec![DmlLut, WeightLut, OrObsLut, OrExpLut, DiffMeans],
        ModelKind::Surrogacy => vec![DmlSurrogacy, WeightSur, OrObsSur, OrExpSur],
    }
}

/// Accepts full names (`dml_lut`) and model-relative aliases (`dml`, `weight`, `or_obs`, `or_exp`).
pub fn parse_estimator(name: &str, model: ModelKind) -> Result<EstimatorKind, ConfigError> {
    use EstimatorKind::*;
    let lut = model == ModelKind::LatentUnconfounded;
    let kind = match name {
        "dml" => EstimatorKind::dml_for(model),
        "weight" => if lut { WeightLut } else { WeightSur },
        "or_obs" => if lut { OrObsLut } else { OrObsSur },
        "or_exp" => if lut { OrExpLut } else { OrExpSur },
        other => EstimatorKind::from_name(other).ok_or_else(|| ConfigError::Invalid(format!("unknown estimator `{other}`")))?,
    };
    if kind != DiffMeans && kind.model() != model {
        return invalid(format!("estimator {kind} does not apply to the {model} model"));
    }
    Ok(kind)
}

/// Parses `component[:mode[:shape[:scale]]]`, e.g. `rho1:mul:const` or `nu:add:tanh:0.5`.
pub fn parse_perturbation(text: &str) -> Result<Perturbation, String> {
    let parts: Vec<&str> = text.split(':').collect();
    let component = match parts[0] {
        "mu0" => Component::Mu0,
        "mu1" => Component::Mu1,
        "mu_bar0" => Component::MuBar0,
        "mu_bar1" => Component::MuBar1,
        "rho0" => Component::Rho0,
        "rho1" => Component::Rho1,
        "varrho_x" => Component::VarrhoX,
        "gamma_x" => Component::GammaX,
        "nu" => Component::Nu,
        "nu_bar0" => Component::NuBar0,
        "nu_bar1" => Component::NuBar1,
        "varrho_sx" => Component::VarrhoSx,
        "gamma_sx" => Component::GammaSx,
        other => return Err(format!("unknown nuisance component `{other}`")),
    };
    let mode = match parts.get(1).copied().unwrap_or("add") {
        "add" => Mode::Additive,
        "mul" => Mode::Multiplicative,
        "logodds" => Mode::LogOdds,
        other => return Err(format!("unknown perturbation mode `{other}`")),
    };
    let shape = match parts.get(2).copied().unwrap_or("const") {
        "const" => Shape::Constant,
        "tanh" => Shape::Tanh,
        other => return Err(format!("unknown perturbation shape `{other}`")),
    };
    let scale = match parts.get(3) {
        Some(s) => s.parse::<f64>().map_err(|e| format!("bad scale `{s}`: {e}"))?,
        None => 1.0,
    };
    if parts.len() > 4 {
        return Err(format!("too many fields in `{text}`"));
    }
    Ok(Perturbation { component, shape, mode, scale })
}
