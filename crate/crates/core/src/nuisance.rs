//! Model-specific nuisance functions fitted on a training index set.
//!
//! Latent unconfounded model:
//! - `mu[w](s, x) = E[Y | S = s, X = x, W = w, G = 1]`,
//! - `mu_bar[w](x)`: the experimental arm-`w` mean of `mu[w](S, x)`, fitted in two stages,
//! - `rho[w](s, x) = P(W = w | S(w) = s, X = x, G = 1)`, composed by Bayes' rule from
//!   `P(G = 1 | s, W = w, x)`, `P(G = 1 | W = w, x)` and `P(W = 1 | x, G = 1)`,
//! - `varrho(x) = P(W = 1 | x, G = 0)`, `gamma(x) = P(G = 1 | x)`, `pi = P(G = 1)`.
//!
//! Surrogacy model:
//! - `nu(s, x) = E[Y | S = s, X = x, G = 1]` and its nested arm means `nu_bar[w](x)`,
//! - `varrho(s, x)`, `varrho(x)` on the experimental sample, `gamma(s, x)`, `gamma(x)`, `pi`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, Dataset, ModelKind, Observation};
use crate::learners::{
    default_degree, fit_least_squares, fit_probability_ls, FeatureMap, LearnerError, LinearFit, LogisticOptions,
    Predict, ProbabilityFit, DEFAULT_CLIP_EPS,
};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegreeRule {
    /// `max(1, round((n / ln n)^(1 / (2 p + dim))))` with `p = smoothness`.
    Auto { smoothness: f64 },
    Fixed(usize),
}

impl DegreeRule {
    pub fn degree(&self, n: usize, dim: usize) -> usize {
        match *self {
            DegreeRule::Auto { smoothness } => default_degree(n, dim, smoothness),
            DegreeRule::Fixed(j) => j.max(1),
        }
    }
}

impl Default for DegreeRule {
    fn default() -> Self {
        DegreeRule::Auto { smoothness: 2.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityLearner {
    #[default]
    Logistic,
    LeastSquares,
}

/// How the components of `rho[w]` are learned. Both backends compose the same
/// Bayes-rule identity; they differ in the learner used for its three
/// probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoBackend {
    /// Components use [`LearnerConfig::propensity_learner`].
    #[default]
    Bayes,
    /// Components are least-squares probability fits (squared loss on the labels).
    ZetaLeastSquares,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub outcome_degree: DegreeRule,
    pub propensity_degree: DegreeRule,
    pub include_interactions: bool,
    /// Ridge penalty for outcome regressions and least-squares probabilities.
    pub ridge_lambda: f64,
    pub clip_eps: f64,
    pub propensity_learner: ProbabilityLearner,
    pub rho_backend: RhoBackend,
    pub logistic: LogisticOptions,
    /// Standardize inputs on the training rows before building the sieve.
    pub standardize: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            outcome_degree: DegreeRule::default(),
            propensity_degree: DegreeRule::default(),
            include_interactions: true,
            ridge_lambda: 0.0,
            clip_eps: DEFAULT_CLIP_EPS,
            propensity_learner: ProbabilityLearner::Logistic,
            rho_backend: RhoBackend::Bayes,
            logistic: LogisticOptions::default(),
            standardize: true,
        }
    }
}

impl LearnerConfig {
    /// Same polynomial degree for every fit.
    pub fn with_degree(degree: usize) -> Self {
        LearnerConfig {
            outcome_degree: DegreeRule::Fixed(degree),
            propensity_degree: DegreeRule::Fixed(degree),
            ..LearnerConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum NuisanceError {
    #[error("no training rows in stratum {stratum}")]
    EmptyStratum { stratum: &'static str },
    #[error("fitting {component}: {source}")]
    Learner {
        component: &'static str,
        #[source]
        source: LearnerError,
    },
    #[error("nuisance set is for the {expected} model but the dataset is {found}")]
    ModelMismatch { expected: ModelKind, found: ModelKind },
}

/// Nuisance values at one observation, latent unconfounded model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutValues {
    pub mu: [f64; 2],
    pub mu_bar: [f64; 2],
    pub rho: [f64; 2],
    pub varrho_x: f64,
    pub gamma_x: f64,
}

/// Nuisance values at one observation, surrogacy model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogacyValues {
    pub nu: f64,
    pub nu_bar: [f64; 2],
    pub varrho_sx: f64,
    pub varrho_x: f64,
    pub gamma_sx: f64,
    pub gamma_x: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum NuisanceValues {
    Lut(LutValues),
    Surrogacy(SurrogacyValues),
}

/// Anything that can supply nuisance values at an observation: fitted sets,
/// exact oracles, or deliberately corrupted variants of either.
pub trait NuisanceSource: Sync {
    fn model(&self) -> ModelKind;

    fn pi(&self) -> f64;

    fn evaluate(&self, obs: &Observation<'_>) -> NuisanceValues;

    /// Values plus whether any propensity was clipped.
    fn evaluate_counting(&self, obs: &Observation<'_>) -> (NuisanceValues, bool) {
        (self.evaluate(obs), false)
    }
}

/// `clip(z1 / (1 - z1) * (1 - z3) / z3 * p_arm)`: the Bayes-rule form of
/// `rho[w]` with `z1 = P(G = 1 | s, W = w, x)`, `z3 = P(G = 1 | W = w, x)` and
/// `p_arm = P(W = w | x, G = 1)`.
pub fn compose_rho(z1: f64, z3: f64, p_arm: f64, clip_eps: f64) -> f64 {
    let raw = z1 / (1.0 - z1) * (1.0 - z3) / z3 * p_arm;
    if raw.is_nan() {
        0.5
    } else {
        math::clip(raw, clip_eps)
    }
}

/// The three fitted probabilities behind `rho[w]` for one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaTriple {
    /// `P(G = 1 | s, W = w, x)`, input `(s, x)`.
    pub zeta1: ProbabilityFit,
    /// `P(W = 1 | x, G = 1)`, input `x`.
    pub zeta2: ProbabilityFit,
    /// `P(G = 1 | W = w, x)`, input `x`.
    pub zeta3: ProbabilityFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoModel {
    pub arm: Arm,
    pub zeta: ZetaTriple,
    pub clip_eps: f64,
}

impl RhoModel {
    /// Returns the composed value and whether any clip was active.
    pub fn eval_counting(&self, sx: &[f64], x: &[f64]) -> (f64, bool) {
        let z1 = self.zeta.zeta1.eval(sx);
        let z2 = self.zeta.zeta2.eval(x);
        let z3 = self.zeta.zeta3.eval(x);
        let p_arm = if self.arm.is_treated() { z2 } else { 1.0 - z2 };
        let raw = z1 / (1.0 - z1) * (1.0 - z3) / z3 * p_arm;
        let clipped = self.zeta.zeta1.is_clipped(sx)
            || self.zeta.zeta2.is_clipped(x)
            || self.zeta.zeta3.is_clipped(x)
            || !(raw >= self.clip_eps && raw <= 1.0 - self.clip_eps);
        (compose_rho(z1, z3, p_arm, self.clip_eps), clipped)
    }

    pub fn eval(&self, sx: &[f64], x: &[f64]) -> f64 {
        self.eval_counting(sx, x).0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Inputs {
    Sx,
    X,
}

fn input_rows<'a>(ds: &'a Dataset, rows: &[usize], inputs: Inputs) -> Vec<&'a [f64]> {
    rows.iter()
        .map(|&i| {
            let o = ds.obs(i);
            match inputs {
                Inputs::Sx => o.sx,
                Inputs::X => o.x,
            }
        })
        .collect()
}

fn feature_map(
    cfg: &LearnerConfig,
    rule: DegreeRule,
    rows: &[&[f64]],
    dim: usize,
    component: &'static str,
) -> Result<FeatureMap, NuisanceError> {
    let degree = rule.degree(rows.len(), dim);
    if cfg.standardize {
        FeatureMap::standardized(dim, degree, cfg.include_interactions, rows)
            .map_err(|source| NuisanceError::Learner { component, source })
    } else {
        Ok(FeatureMap::new(dim, degree, cfg.include_interactions))
    }
}

fn fit_mean_on(
    cfg: &LearnerConfig,
    inputs: &[&[f64]],
    y: &[f64],
    dim: usize,
    component: &'static str,
) -> Result<LinearFit, NuisanceError> {
    let map = feature_map(cfg, cfg.outcome_degree, inputs, dim, component)?;
    fit_least_squares(&map, inputs, y, cfg.ridge_lambda).map_err(|source| NuisanceError::Learner { component, source })
}

fn fit_probability_on(
    cfg: &LearnerConfig,
    learner: ProbabilityLearner,
    inputs: &[&[f64]],
    labels: &[bool],
    dim: usize,
    component: &'static str,
) -> Result<ProbabilityFit, NuisanceError> {
    let map = feature_map(cfg, cfg.propensity_degree, inputs, dim, component)?;
    let fit = match learner {
        ProbabilityLearner::Logistic => ProbabilityFit::logistic(&map, inputs, labels, &cfg.logistic, cfg.clip_eps),
        ProbabilityLearner::LeastSquares => fit_probability_ls(&map, inputs, labels, cfg.ridge_lambda, cfg.clip_eps),
    };
    fit.map_err(|source| NuisanceError::Learner { component, source })
}

fn select(ds: &Dataset, idx: &[usize], pred: impl Fn(&Observation<'_>) -> bool) -> Vec<usize> {
    idx.iter().copied().filter(|&i| pred(&ds.obs(i))).collect()
}

fn nonempty(rows: Vec<usize>, stratum: &'static str) -> Result<Vec<usize>, NuisanceError> {
    if rows.is_empty() {
        Err(NuisanceError::EmptyStratum { stratum })
    } else {
        Ok(rows)
    }
}

fn outcome(ds: &Dataset, i: usize) -> f64 {
    ds.obs(i).y.expect("validated dataset has y on observational rows")
}

/// Two-stage nested regression for one experimental arm: evaluate `inner` at
/// every training row with `G = 0, W = arm`, then regress those fitted values on
/// `x` over the same rows.
pub fn fit_nested_bar(
    ds: &Dataset,
    idx: &[usize],
    inner: &dyn Fn(&[f64]) -> f64,
    arm: Arm,
    cfg: &LearnerConfig,
) -> Result<LinearFit, NuisanceError> {
    let stratum = match arm {
        Arm::Control => "G=0, W=0",
        Arm::Treated => "G=0, W=1",
    };
    let rows = nonempty(select(ds, idx, |o| !o.g && o.w == Some(arm.is_treated())), stratum)?;
    let stage1: Vec<f64> = rows.iter().map(|&i| inner(ds.obs(i).sx)).collect();
    let xs = input_rows(ds, &rows, Inputs::X);
    let component = match arm {
        Arm::Control => "bar mean, arm 0",
        Arm::Treated => "bar mean, arm 1",
    };
    fit_mean_on(cfg, &xs, &stage1, ds.q(), component)
}

fn training_pi(ds: &Dataset, idx: &[usize], clip_eps: f64) -> f64 {
    let n1 = idx.iter().filter(|&&i| ds.obs(i).g).count();
    math::clip(n1 as f64 / idx.len() as f64, clip_eps)
}

/// Fitted nuisances for the latent unconfounded model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutNuisances {
    pub mu: [LinearFit; 2],
    pub mu_bar: [LinearFit; 2],
    pub rho: [RhoModel; 2],
    pub varrho_x: ProbabilityFit,
    pub gamma_x: ProbabilityFit,
    pub pi: f64,
}

pub fn fit_lut(ds: &Dataset, idx: &[usize], cfg: &LearnerConfig) -> Result<LutNuisances, NuisanceError> {
    if ds.model() != ModelKind::LatentUnconfounded {
        return Err(NuisanceError::ModelMismatch { expected: ModelKind::LatentUnconfounded, found: ds.model() });
    }
    if idx.is_empty() {
        return Err(NuisanceError::EmptyStratum { stratum: "training set" });
    }
    let (d, q) = (ds.d(), ds.q());
    let dim_sx = d + q;
    let rho_learner = match cfg.rho_backend {
        RhoBackend::Bayes => cfg.propensity_learner,
        RhoBackend::ZetaLeastSquares => ProbabilityLearner::LeastSquares,
    };

    let mut mu = Vec::with_capacity(2);
    let mut mu_bar = Vec::with_capacity(2);
    let mut zeta13 = Vec::with_capacity(2);
    for arm in Arm::BOTH {
        let wv = arm.is_treated();
        let (obs_stratum, mu_name, z1_name, z3_name) = match arm {
            Arm::Control => ("G=1, W=0", "outcome mean, arm 0", "P(G=1|s,W=0,x)", "P(G=1|W=0,x)"),
            Arm::Treated => ("G=1, W=1", "outcome mean, arm 1", "P(G=1|s,W=1,x)", "P(G=1|W=1,x)"),
        };
        let rows = nonempty(select(ds, idx, |o| o.g && o.w == Some(wv)), obs_stratum)?;
        let y: Vec<f64> = rows.iter().map(|&i| outcome(ds, i)).collect();
        let fit = fit_mean_on(cfg, &input_rows(ds, &rows, Inputs::Sx), &y, dim_sx, mu_name)?;
        let bar = fit_nested_bar(ds, idx, &|sx| fit.eval(sx), arm, cfg)?;
        mu.push(fit);
        mu_bar.push(bar);

        // G-propensities within arm w use both samples
        let arm_rows = select(ds, idx, |o| o.w == Some(wv));
        let labels: Vec<bool> = arm_rows.iter().map(|&i| ds.obs(i).g).collect();
        let z1 = fit_probability_on(cfg, rho_learner, &input_rows(ds, &arm_rows, Inputs::Sx), &labels, dim_sx, z1_name)?;
        let z3 = fit_probability_on(cfg, rho_learner, &input_rows(ds, &arm_rows, Inputs::X), &labels, q, z3_name)?;
        zeta13.push((z1, z3));
    }
    let obs_rows = select(ds, idx, |o| o.g);
    let labels: Vec<bool> = obs_rows.iter().map(|&i| ds.obs(i).w == Some(true)).collect();
    let zeta2 = fit_probability_on(cfg, rho_learner, &input_rows(ds, &obs_rows, Inputs::X), &labels, q, "P(W=1|x,G=1)")?;

    let exp_rows = nonempty(select(ds, idx, |o| !o.g), "G=0")?;
    let labels: Vec<bool> = exp_rows.iter().map(|&i| ds.obs(i).w == Some(true)).collect();
    let varrho_x = fit_probability_on(
        cfg,
        cfg.propensity_learner,
        &input_rows(ds, &exp_rows, Inputs::X),
        &labels,
        q,
        "P(W=1|x,G=0)",
    )?;
    let all: Vec<&[f64]> = input_rows(ds, idx, Inputs::X);
    let labels: Vec<bool> = idx.iter().map(|&i| ds.obs(i).g).collect();
    let gamma_x = fit_probability_on(cfg, cfg.propensity_learner, &all, &labels, q, "P(G=1|x)")?;

    let mut zeta13 = zeta13.into_iter();
    let (z1_0, z3_0) = zeta13.next().unwrap();
    let (z1_1, z3_1) = zeta13.next().unwrap();
    let rho = [
        RhoModel {
            arm: Arm::Control,
            zeta: ZetaTriple { zeta1: z1_0, zeta2: zeta2.clone(), zeta3: z3_0 },
            clip_eps: cfg.clip_eps,
        },
        RhoModel { arm: Arm::Treated, zeta: ZetaTriple { zeta1: z1_1, zeta2, zeta3: z3_1 }, clip_eps: cfg.clip_eps },
    ];
    let mut mu = mu.into_iter();
    let mut mu_bar = mu_bar.into_iter();
    Ok(LutNuisances {
        mu: [mu.next().unwrap(), mu.next().unwrap()],
        mu_bar: [mu_bar.next().unwrap(), mu_bar.next().unwrap()],
        rho,
        varrho_x,
        gamma_x,
        pi: training_pi(ds, idx, cfg.clip_eps),
    })
}

impl NuisanceSource for LutNuisances {
    fn model(&self) -> ModelKind {
        ModelKind::LatentUnconfounded
    }

    fn pi(&self) -> f64 {
        self.pi
    }

    fn evaluate(&self, obs: &Observation<'_>) -> NuisanceValues {
        self.evaluate_counting(obs).0
    }

    fn evaluate_counting(&self, obs: &Observation<'_>) -> (NuisanceValues, bool) {
        let (r0, c0) = self.rho[0].eval_counting(obs.sx, obs.x);
        let (r1, c1) = self.rho[1].eval_counting(obs.sx, obs.x);
        let clipped = c0 || c1 || self.varrho_x.is_clipped(obs.x) || self.gamma_x.is_clipped(obs.x);
        let v = LutValues {
            mu: [self.mu[0].eval(obs.sx), self.mu[1].eval(obs.sx)],
            mu_bar: [self.mu_bar[0].eval(obs.x), self.mu_bar[1].eval(obs.x)],
            rho: [r0, r1],
            varrho_x: self.varrho_x.eval(obs.x),
            gamma_x: self.gamma_x.eval(obs.x),
        };
        (NuisanceValues::Lut(v), clipped)
    }
}

/// Fitted nuisances for the surrogacy model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogacyNuisances {
    pub nu: LinearFit,
    pub nu_bar: [LinearFit; 2],
    pub varrho_sx: ProbabilityFit,
    pub varrho_x: ProbabilityFit,
    pub gamma_sx: ProbabilityFit,
    pub gamma_x: ProbabilityFit,
    pub pi: f64,
}

pub fn fit_surrogacy(ds: &Dataset, idx: &[usize], cfg: &LearnerConfig) -> Result<SurrogacyNuisances, NuisanceError> {
    if ds.model() != ModelKind::Surrogacy {
        return Err(NuisanceError::ModelMismatch { expected: ModelKind::Surrogacy, found: ds.model() });
    }
    if idx.is_empty() {
        return Err(NuisanceError::EmptyStratum { stratum: "training set" });
    }
    let (d, q) = (ds.d(), ds.q());
    let obs_rows = nonempty(select(ds, idx, |o| o.g), "G=1")?;
    let y: Vec<f64> = obs_rows.iter().map(|&i| outcome(ds, i)).collect();
    let nu = fit_mean_on(cfg, &input_rows(ds, &obs_rows, Inputs::Sx), &y, d + q, "surrogate index")?;
    let nu_bar = [
        fit_nested_bar(ds, idx, &|sx| nu.eval(sx), Arm::Control, cfg)?,
        fit_nested_bar(ds, idx, &|sx| nu.eval(sx), Arm::Treated, cfg)?,
    ];

    let exp_rows = nonempty(select(ds, idx, |o| !o.g), "G=0")?;
    let labels: Vec<bool> = exp_rows.iter().map(|&i| ds.obs(i).w == Some(true)).collect();
    let learner = cfg.propensity_learner;
    let varrho_sx =
        fit_probability_on(cfg, learner, &input_rows(ds, &exp_rows, Inputs::Sx), &labels, d + q, "P(W=1|s,x,G=0)")?;
    let varrho_x = fit_probability_on(cfg, learner, &input_rows(ds, &exp_rows, Inputs::X), &labels, q, "P(W=1|x,G=0)")?;
    let labels: Vec<bool> = idx.iter().map(|&i| ds.obs(i).g).collect();
    let gamma_sx = fit_probability_on(cfg, learner, &input_rows(ds, idx, Inputs::Sx), &labels, d + q, "P(G=1|s,x)")?;
    let gamma_x = fit_probability_on(cfg, learner, &input_rows(ds, idx, Inputs::X), &labels, q, "P(G=1|x)")?;

    Ok(SurrogacyNuisances { nu, nu_bar, varrho_sx, varrho_x, gamma_sx, gamma_x, pi: training_pi(ds, idx, cfg.clip_eps) })
}

impl NuisanceSource for SurrogacyNuisances {
    fn model(&self) -> ModelKind {
        ModelKind::Surrogacy
    }

    fn pi(&self) -> f64 {
        self.pi
    }

    fn evaluate(&self, obs: &Observation<'_>) -> NuisanceValues {
        self.evaluate_counting(obs).0
    }

    fn evaluate_counting(&self, obs: &Observation<'_>) -> (NuisanceValues, bool) {
        let clipped = self.varrho_sx.is_clipped(obs.sx)
            || self.varrho_x.is_clipped(obs.x)
            || self.gamma_sx.is_clipped(obs.sx)
            || self.gamma_x.is_clipped(obs.x);
        let v = SurrogacyValues {
            nu: self.nu.eval(obs.sx),
            nu_bar: [self.nu_bar[0].eval(obs.x), self.nu_bar[1].eval(obs.x)],
            varrho_sx: self.varrho_sx.eval(obs.sx),
            varrho_x: self.varrho_x.eval(obs.x),
            gamma_sx: self.gamma_sx.eval(obs.sx),
            gamma_x: self.gamma_x.eval(obs.x),
        };
        (NuisanceValues::Surrogacy(v), clipped)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum NuisanceSet {
    Lut(LutNuisances),
    Surrogacy(SurrogacyNuisances),
}

impl NuisanceSet {
    /// Fits the nuisance set matching the dataset's model on rows `idx`.
    pub fn fit(ds: &Dataset, idx: &[usize], cfg: &LearnerConfig) -> Result<Self, NuisanceError> {
        match ds.model() {
            ModelKind::LatentUnconfounded => fit_lut(ds, idx, cfg).map(NuisanceSet::Lut),
            ModelKind::Surrogacy => fit_surrogacy(ds, idx, cfg).map(NuisanceSet::Surrogacy),
        }
    }
}

impl NuisanceSource for NuisanceSet {
    fn model(&self) -> ModelKind {
        match self {
            NuisanceSet::Lut(_) => ModelKind::LatentUnconfounded,
            NuisanceSet::Surrogacy(_) => ModelKind::Surrogacy,
        }
    }

    fn pi(&self) -> f64 {
        match self {
            NuisanceSet::Lut(n) => n.pi,
            NuisanceSet::Surrogacy(n) => n.pi,
        }
    }

    fn evaluate(&self, obs: &Observation<'_>) -> NuisanceValues {
        match self {
            NuisanceSet::Lut(n) => n.evaluate(obs),
            NuisanceSet::Surrogacy(n) => n.evaluate(obs),
        }
    }

    fn evaluate_counting(&self, obs: &Observation<'_>) -> (NuisanceValues, bool) {
        match self {
            NuisanceSet::Lut(n) => n.evaluate_counting(obs),
            NuisanceSet::Surrogacy(n) => n.evaluate_counting(obs),
        }
    }
}
