//! Influence functions, moment solvers, variance estimates and confidence intervals.
//!
//! Every efficient influence function used here is affine in `tau`: it can be
//! written as `a - tau * b` with `b = g / pi` (observational target) or
//! `b = (1 - g) / (1 - pi)` (experimental target). The cross-fitted estimator
//! is therefore the closed-form root `sum(a) / sum(b)`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::crossfit::{crossfit_nuisances, make_folds, CrossfitError, CrossfitEvaluations, PiMode, DEFAULT_FOLDS};
use crate::dataset::{Dataset, ModelKind, Observation, Target};
use crate::math;
use crate::nuisance::{LearnerConfig, LutValues, NuisanceError, NuisanceSet, NuisanceSource, NuisanceValues, SurrogacyValues};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Cross-fitted efficient influence function, latent unconfounded model.
    DmlLut,
    /// Cross-fitted efficient influence function, surrogacy model.
    DmlSurrogacy,
    /// Inverse-propensity weighting of observational outcomes.
    WeightLut,
    /// Observational average of `mu_bar[1](x) - mu_bar[0](x)`.
    OrObsLut,
    /// Experimental average of the odds-weighted `mu[1] - mu[0]` contrast.
    OrExpLut,
    /// Surrogate-score weighting of observational outcomes.
    WeightSur,
    /// Observational average of `nu_bar[1](x) - nu_bar[0](x)`.
    OrObsSur,
    /// Experimental weighting of the surrogate index.
    OrExpSur,
    /// Observational treated mean minus untreated mean.
    DiffMeans,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 9] = [
        EstimatorKind::DmlLut,
        EstimatorKind::DmlSurrogacy,
        EstimatorKind::WeightLut,
        EstimatorKind::OrObsLut,
        EstimatorKind::OrExpLut,
        EstimatorKind::WeightSur,
        EstimatorKind::OrObsSur,
        EstimatorKind::OrExpSur,
        EstimatorKind::DiffMeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::DmlLut => "dml_lut",
            EstimatorKind::DmlSurrogacy => "dml_surrogacy",
            EstimatorKind::WeightLut => "weight_lut",
            EstimatorKind::OrObsLut => "or_obs_lut",
            EstimatorKind::OrExpLut => "or_exp_lut",
            EstimatorKind::WeightSur => "weight_sur",
            EstimatorKind::OrObsSur => "or_obs_sur",
            EstimatorKind::OrExpSur => "or_exp_sur",
            EstimatorKind::DiffMeans => "diff_means",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        EstimatorKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn model(self) -> ModelKind {
        match self {
            EstimatorKind::DmlLut
            | EstimatorKind::WeightLut
            | EstimatorKind::OrObsLut
            | EstimatorKind::OrExpLut
            | EstimatorKind::DiffMeans => ModelKind::LatentUnconfounded,
            _ => ModelKind::Surrogacy,
        }
    }

    pub fn is_dml(self) -> bool {
        matches!(self, EstimatorKind::DmlLut | EstimatorKind::DmlSurrogacy)
    }

    /// The DML kind for a model.
    pub fn dml_for(model: ModelKind) -> Self {
        match model {
            ModelKind::LatentUnconfounded => EstimatorKind::DmlLut,
            ModelKind::Surrogacy => EstimatorKind::DmlSurrogacy,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EstimatorError {
    #[error("observation lacks required field `{0}`")]
    MissingField(&'static str),
    #[error("moment slope {0:.3e} is too small to solve for tau")]
    DegenerateSlope(f64),
    #[error("estimator {kind} does not apply to the {model} model")]
    IncompatibleKind { kind: EstimatorKind, model: ModelKind },
    #[error("estimator {kind} is only defined for target {supported}")]
    UnsupportedTarget { kind: EstimatorKind, supported: Target },
    #[error("nuisance values are for the wrong model")]
    NuisanceModelMismatch,
    #[error("{0}")]
    EmptyArm(String),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Crossfit(#[from] CrossfitError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Units at which a propensity evaluation hit the clip.
    pub clipped: usize,
    /// Training `pi` per fold (one entry for full-sample fits).
    pub fold_pi: Vec<f64>,
    /// Variance comes from the plug-in influence function rather than the
    /// estimator's own moment.
    pub heuristic_variance: bool,
    /// The estimator ignores confounding by design.
    pub naive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub tau_hat: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub v_hat: f64,
    pub n: usize,
    /// Number of cross-fitting folds (1 for full-sample fits).
    pub k: usize,
    pub kind: EstimatorKind,
    pub target: Target,
    pub alpha: f64,
    pub diagnostics: Diagnostics,
}

/// `tau_hat -+ z_{1 - alpha/2} * sqrt(v_hat / n)`.
pub fn wald_interval(tau_hat: f64, v_hat: f64, n: usize, alpha: f64) -> Result<(f64, [f64; 2]), EstimatorError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EstimatorError::InvalidAlpha(alpha));
    }
    let se = libm::sqrt(v_hat / n as f64);
    let z = math::normal_quantile(1.0 - alpha / 2.0);
    Ok((se, [tau_hat - z * se, tau_hat + z * se]))
}

impl EstimateReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: EstimatorKind,
        target: Target,
        tau_hat: f64,
        v_hat: f64,
        n: usize,
        k: usize,
        alpha: f64,
        diagnostics: Diagnostics,
    ) -> Result<Self, EstimatorError> {
        let (se, ci) = wald_interval(tau_hat, v_hat, n, alpha)?;
        Ok(EstimateReport { tau_hat, se, ci, v_hat, n, k, kind, target, alpha, diagnostics })
    }

    pub fn covers(&self, tau: f64) -> bool {
        self.ci[0] <= tau && tau <= self.ci[1]
    }
}

fn treatment(obs: &Observation<'_>) -> Result<f64, EstimatorError> {
    obs.w.map(|w| if w { 1.0 } else { 0.0 }).ok_or(EstimatorError::MissingField("w"))
}

fn outcome(obs: &Observation<'_>) -> Result<f64, EstimatorError> {
    obs.y.ok_or(EstimatorError::MissingField("y"))
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Moment pieces `(a, b)` with `moment = a - tau * b`.
pub type AffineMoment = (f64, f64);

/// Efficient influence function pieces, latent unconfounded model, observational target.
pub fn psi1_parts(obs: &Observation<'_>, v: &LutValues, pi: f64) -> Result<AffineMoment, EstimatorError> {
    let w = treatment(obs)?;
    let contrast = v.mu_bar[1] - v.mu_bar[0];
    if obs.g {
        let y = outcome(obs)?;
        let inner = w * (y - v.mu[1]) / v.rho[1] - (1.0 - w) * (y - v.mu[0]) / v.rho[0] + contrast;
        Ok((inner / pi, 1.0 / pi))
    } else {
        let odds = v.gamma_x / (1.0 - v.gamma_x);
        let inner = w * (v.mu[1] - v.mu_bar[1]) / v.varrho_x - (1.0 - w) * (v.mu[0] - v.mu_bar[0]) / (1.0 - v.varrho_x);
        Ok((odds * inner / pi, 0.0))
    }
}

/// Efficient influence function pieces, surrogacy model, observational target.
pub fn xi1_parts(obs: &Observation<'_>, v: &SurrogacyValues, pi: f64) -> Result<AffineMoment, EstimatorError> {
    let contrast = v.nu_bar[1] - v.nu_bar[0];
    if obs.g {
        let y = outcome(obs)?;
        let ratio = (v.gamma_x / v.gamma_sx) * ((1.0 - v.gamma_sx) / (1.0 - v.gamma_x));
        let score = (v.varrho_sx - v.varrho_x) * (y - v.nu) / (v.varrho_x * (1.0 - v.varrho_x));
        Ok(((ratio * score + contrast) / pi, 1.0 / pi))
    } else {
        let w = treatment(obs)?;
        let odds = v.gamma_x / (1.0 - v.gamma_x);
        let inner = w * (v.nu - v.nu_bar[1]) / v.varrho_x - (1.0 - w) * (v.nu - v.nu_bar[0]) / (1.0 - v.varrho_x);
        Ok((odds * inner / pi, 0.0))
    }
}

/// Efficient influence function pieces, latent unconfounded model, experimental target.
pub fn psi0_parts(obs: &Observation<'_>, v: &LutValues, pi: f64) -> Result<AffineMoment, EstimatorError> {
    let w = treatment(obs)?;
    if obs.g {
        let y = outcome(obs)?;
        let odds = (1.0 - v.gamma_x) / v.gamma_x;
        let inner = w * (y - v.mu[1]) / v.rho[1] - (1.0 - w) * (y - v.mu[0]) / v.rho[0];
        Ok((odds * inner / (1.0 - pi), 0.0))
    } else {
        let inner = w * (v.mu[1] - v.mu_bar[1]) / v.varrho_x - (1.0 - w) * (v.mu[0] - v.mu_bar[0]) / (1.0 - v.varrho_x)
            + (v.mu_bar[1] - v.mu_bar[0]);
        Ok((inner / (1.0 - pi), 1.0 / (1.0 - pi)))
    }
}

/// Efficient influence function pieces, surrogacy model, experimental target.
pub fn xi0_parts(obs: &Observation<'_>, v: &SurrogacyValues, pi: f64) -> Result<AffineMoment, EstimatorError> {
    if obs.g {
        let y = outcome(obs)?;
        let odds = (1.0 - v.gamma_sx) / v.gamma_sx;
        let score = (v.varrho_sx - v.varrho_x) * (y - v.nu) / (v.varrho_x * (1.0 - v.varrho_x));
        Ok((odds * score / (1.0 - pi), 0.0))
    } else {
        let w = treatment(obs)?;
        let inner = w * (v.nu - v.nu_bar[1]) / v.varrho_x - (1.0 - w) * (v.nu - v.nu_bar[0]) / (1.0 - v.varrho_x)
            + (v.nu_bar[1] - v.nu_bar[0]);
        Ok((inner / (1.0 - pi), 1.0 / (1.0 - pi)))
    }
}

pub fn eval_psi1(obs: &Observation<'_>, tau: f64, v: &LutValues, pi: f64) -> Result<f64, EstimatorError> {
    psi1_parts(obs, v, pi).map(|(a, b)| a - tau * b)
}

pub fn eval_xi1(obs: &Observation<'_>, tau: f64, v: &SurrogacyValues, pi: f64) -> Result<f64, EstimatorError> {
    xi1_parts(obs, v, pi).map(|(a, b)| a - tau * b)
}

pub fn eval_psi0(obs: &Observation<'_>, tau: f64, v: &LutValues, pi: f64) -> Result<f64, EstimatorError> {
    psi0_parts(obs, v, pi).map(|(a, b)| a - tau * b)
}

pub fn eval_xi0(obs: &Observation<'_>, tau: f64, v: &SurrogacyValues, pi: f64) -> Result<f64, EstimatorError> {
    xi0_parts(obs, v, pi).map(|(a, b)| a - tau * b)
}

/// Efficient influence function pieces for whichever model `values` belongs to.
pub fn eif_parts(obs: &Observation<'_>, values: &NuisanceValues, pi: f64, target: Target) -> Result<AffineMoment, EstimatorError> {
    match (values, target) {
        (NuisanceValues::Lut(v), Target::Tau1) => psi1_parts(obs, v, pi),
        (NuisanceValues::Lut(v), Target::Tau0) => psi0_parts(obs, v, pi),
        (NuisanceValues::Surrogacy(v), Target::Tau1) => xi1_parts(obs, v, pi),
        (NuisanceValues::Surrogacy(v), Target::Tau0) => xi0_parts(obs, v, pi),
    }
}

pub fn eval_eif(obs: &Observation<'_>, tau: f64, values: &NuisanceValues, pi: f64, target: Target) -> Result<f64, EstimatorError> {
    eif_parts(obs, values, pi, target).map(|(a, b)| a - tau * b)
}

/// Root and variance of an affine moment: `tau = sum(a) / sum(b)` and
/// `v = mean((a - tau b)^2)`. With `center` the variance is taken around the
/// moment mean instead of zero.
fn solve_affine(parts: &[AffineMoment], center: bool) -> Result<(f64, f64, Vec<f64>), EstimatorError> {
    let a: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let b: Vec<f64> = parts.iter().map(|p| p.1).collect();
    let sb = math::mean(&b);
    if !(sb.abs() >= 1e-12) {
        return Err(EstimatorError::DegenerateSlope(sb));
    }
    let tau = math::mean(&a) / sb;
    let psi: Vec<f64> = parts.iter().map(|(a, b)| a - tau * b).collect();
    let m = if center { math::mean(&psi) } else { 0.0 };
    let sq: Vec<f64> = psi.iter().map(|p| (p - m) * (p - m)).collect();
    Ok((tau, math::mean(&sq), psi))
}

/// Cross-fitted estimator from out-of-fold nuisance evaluations.
///
/// The root pools all units (it coincides with the average of per-fold
/// moments when folds have equal size), and the variance is the mean squared
/// influence function at the root.
pub fn solve_dml(ds: &Dataset, evals: &CrossfitEvaluations, target: Target, alpha: f64) -> Result<EstimateReport, EstimatorError> {
    let kind = EstimatorKind::dml_for(ds.model());
    let parts = (0..ds.n())
        .map(|i| eif_parts(&ds.obs(i), &evals.values[i], evals.pi[i], target))
        .collect::<Result<Vec<_>, _>>()?;
    let (tau, v, _) = solve_affine(&parts, false)?;
    EstimateReport::new(
        kind,
        target,
        tau,
        v,
        ds.n(),
        evals.k(),
        alpha,
        Diagnostics { clipped: evals.clipped, fold_pi: evals.fold_pi.clone(), ..Diagnostics::default() },
    )
}

fn lut(v: &NuisanceValues) -> Result<&LutValues, EstimatorError> {
    match v {
        NuisanceValues::Lut(v) => Ok(v),
        NuisanceValues::Surrogacy(_) => Err(EstimatorError::NuisanceModelMismatch),
    }
}

fn sur(v: &NuisanceValues) -> Result<&SurrogacyValues, EstimatorError> {
    match v {
        NuisanceValues::Surrogacy(v) => Ok(v),
        NuisanceValues::Lut(_) => Err(EstimatorError::NuisanceModelMismatch),
    }
}

/// Pieces `(a, b)` of a non-orthogonal moment. Outcome-regression moments on
/// the observational sample are centered by `tau * g / pi` (ratio form); the
/// others by `tau`.
pub fn nonorth_parts(kind: EstimatorKind, obs: &Observation<'_>, values: &NuisanceValues, pi: f64) -> Result<AffineMoment, EstimatorError> {
    let g = flag(obs.g);
    match kind {
        EstimatorKind::WeightLut => {
            let v = lut(values)?;
            if obs.g {
                let (w, y) = (treatment(obs)?, outcome(obs)?);
                Ok(((w * y / v.rho[1] - (1.0 - w) * y / v.rho[0]) / pi, 1.0))
            } else {
                Ok((0.0, 1.0))
            }
        }
        EstimatorKind::OrObsLut => {
            let v = lut(values)?;
            Ok((g / pi * (v.mu_bar[1] - v.mu_bar[0]), g / pi))
        }
        EstimatorKind::OrExpLut => {
            let v = lut(values)?;
            let odds = v.gamma_x / (1.0 - v.gamma_x);
            Ok(((1.0 - g) / pi * odds * (v.mu[1] - v.mu[0]), 1.0))
        }
        EstimatorKind::WeightSur => {
            let v = sur(values)?;
            if obs.g {
                let y = outcome(obs)?;
                let odds = v.gamma_x / (1.0 - v.gamma_x) * (1.0 - v.gamma_sx) / v.gamma_sx;
                let score = v.varrho_sx / v.varrho_x - (1.0 - v.varrho_sx) / (1.0 - v.varrho_x);
                Ok((y / pi * odds * score, 1.0))
            } else {
                Ok((0.0, 1.0))
            }
        }
        EstimatorKind::OrObsSur => {
            let v = sur(values)?;
            Ok((g / pi * (v.nu_bar[1] - v.nu_bar[0]), g / pi))
        }
        EstimatorKind::OrExpSur => {
            let v = sur(values)?;
            if obs.g {
                Ok((0.0, 1.0))
            } else {
                let w = treatment(obs)?;
                let odds = v.gamma_x / (1.0 - v.gamma_x);
                let score = w / v.varrho_x - (1.0 - w) / (1.0 - v.varrho_x);
                Ok((odds * score * v.nu / pi, 1.0))
            }
        }
        EstimatorKind::DmlLut | EstimatorKind::DmlSurrogacy | EstimatorKind::DiffMeans => {
            unreachable!("not a non-orthogonal moment")
        }
    }
}

fn check_kind(kind: EstimatorKind, model: ModelKind) -> Result<(), EstimatorError> {
    if kind.model() != model {
        return Err(EstimatorError::IncompatibleKind { kind, model });
    }
    Ok(())
}

/// Full-sample non-orthogonal moment estimator. `pi` is the sample share of
/// `g = 1`, and the variance is the sample variance of the plug-in efficient
/// influence function at the estimate.
pub fn solve_nonorth(
    ds: &Dataset,
    nuis: &dyn NuisanceSource,
    kind: EstimatorKind,
    target: Target,
    alpha: f64,
) -> Result<EstimateReport, EstimatorError> {
    if kind.is_dml() || kind == EstimatorKind::DiffMeans {
        return Err(EstimatorError::IncompatibleKind { kind, model: ds.model() });
    }
    check_kind(kind, ds.model())?;
    if nuis.model() != ds.model() {
        return Err(EstimatorError::NuisanceModelMismatch);
    }
    if target != Target::Tau1 {
        return Err(EstimatorError::UnsupportedTarget { kind, supported: Target::Tau1 });
    }
    let pi = ds.group_share();
    let mut parts = Vec::with_capacity(ds.n());
    let mut eif = Vec::with_capacity(ds.n());
    let mut clipped = 0;
    for o in ds.iter() {
        let (values, c) = nuis.evaluate_counting(&o);
        clipped += usize::from(c);
        parts.push(nonorth_parts(kind, &o, &values, pi)?);
        eif.push(eif_parts(&o, &values, pi, target)?);
    }
    let (tau, _, _) = solve_affine(&parts, false)?;
    let psi: Vec<f64> = eif.iter().map(|(a, b)| a - tau * b).collect();
    let m = math::mean(&psi);
    let v = if psi.len() > 1 {
        psi.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / (psi.len() - 1) as f64
    } else {
        0.0
    };
    EstimateReport::new(
        kind,
        target,
        tau,
        v,
        ds.n(),
        1,
        alpha,
        Diagnostics { clipped, fold_pi: alloc::vec![pi], heuristic_variance: true, naive: false },
    )
}

/// Observational treated-minus-untreated mean with the two-sample Wald variance.
/// `n` in the report is the number of observational rows.
pub fn diff_means(ds: &Dataset, alpha: f64) -> Result<EstimateReport, EstimatorError> {
    check_kind(EstimatorKind::DiffMeans, ds.model())?;
    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for o in ds.iter().filter(|o| o.g) {
        let w = o.w.ok_or(EstimatorError::MissingField("w"))?;
        arms[usize::from(w)].push(outcome(&o)?);
    }
    for (a, name) in arms.iter().zip(["untreated", "treated"]) {
        if a.len() < 2 {
            return Err(EstimatorError::EmptyArm(alloc::format!(
                "difference in means needs at least two {name} observational rows, found {}",
                a.len()
            )));
        }
    }
    let stats = |v: &[f64]| {
        let m = math::mean(v);
        let s2 = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        (m, s2 / v.len() as f64)
    };
    let (m0, var0) = stats(&arms[0]);
    let (m1, var1) = stats(&arms[1]);
    let n = arms[0].len() + arms[1].len();
    EstimateReport::new(
        EstimatorKind::DiffMeans,
        Target::Tau1,
        m1 - m0,
        (var0 + var1) * n as f64,
        n,
        1,
        alpha,
        Diagnostics { naive: true, ..Diagnostics::default() },
    )
}

/// Settings shared by every estimator run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateOptions {
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub pi_mode: PiMode,
    pub learner: LearnerConfig,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            k: DEFAULT_FOLDS,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            pi_mode: PiMode::PerFold,
            learner: LearnerConfig::default(),
        }
    }
}

/// Runs each requested estimator on `ds`, fitting nuisances as needed. The
/// full-sample nuisance set is shared by the non-orthogonal kinds.
pub fn run_estimators(
    ds: &Dataset,
    kinds: &[EstimatorKind],
    target: Target,
    opts: &EstimateOptions,
) -> Vec<Result<EstimateReport, EstimatorError>> {
    let mut full: Option<Result<NuisanceSet, NuisanceError>> = None;
    kinds
        .iter()
        .map(|&kind| {
            check_kind(kind, ds.model())?;
            if kind.is_dml() {
                let plan = make_folds(ds.n(), opts.k, opts.seed)?;
                let evals = crossfit_nuisances(ds, &plan, &opts.learner, opts.pi_mode)?;
                solve_dml(ds, &evals, target, opts.alpha)
            } else if kind == EstimatorKind::DiffMeans {
                diff_means(ds, opts.alpha)
            } else {
                if target != Target::Tau1 {
                    return Err(EstimatorError::UnsupportedTarget { kind, supported: Target::Tau1 });
                }
                let all: Vec<usize> = (0..ds.n()).collect();
                let set = full.get_or_insert_with(|| NuisanceSet::fit(ds, &all, &opts.learner));
                let set = set.as_ref().map_err(|e| EstimatorError::Nuisance(e.clone()))?;
                solve_nonorth(ds, set, kind, target, opts.alpha)
            }
        })
        .collect()
}
