//! Monte Carlo efficiency bounds under the generator's oracle nuisances, and
//! finite-difference orthogonality audits of the estimating moments.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ModelKind, Target};
use crate::dgp::{self, DgpError, DgpSpec, OracleNuisances};
use crate::estimators::{eif_parts, nonorth_parts, EstimatorError, EstimatorKind};
use crate::math::{self, dot, sigmoid};
use crate::nuisance::NuisanceValues;
use crate::rng::StreamKey;

/// Draws per independent stream in [`compute_bound`].
pub const BOUND_CHUNK: usize = 4096;
/// Base step of the finite-difference stencil.
pub const DEFAULT_STEP: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EfficiencyError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("perturbation of {component} leaves (0, 1) at t = {t}")]
    PerturbationOutOfRange { component: &'static str, t: f64 },
    #[error("perturbation of {component} does not apply to the {model} model")]
    ComponentMismatch { component: &'static str, model: ModelKind },
    #[error("at least two draws are required")]
    TooFewDraws,
    #[error(transparent)]
    Moment(#[from] EstimatorError),
}

impl From<DgpError> for EfficiencyError {
    fn from(e: DgpError) -> Self {
        EfficiencyError::InvalidSpec(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: f64,
    pub mc_se: f64,
    pub n_draws: usize,
    pub target: Target,
    pub model: ModelKind,
}

impl BoundReport {
    pub fn from_values(values: &[f64], target: Target, model: ModelKind) -> Self {
        let (bound, mc_se) = math::mean_and_se(values);
        BoundReport { bound, mc_se, n_draws: values.len(), target, model }
    }

    pub fn relative_se(&self) -> f64 {
        self.mc_se / self.bound
    }
}

/// Bound integrand at one draw of `(x, u)` and a uniform `uw` that sets the
/// observational treatment (only the surrogacy bounds integrate over the
/// observational law of `S`).
pub fn bound_integrand(o: &OracleNuisances, target: Target, x: &[f64], u: &[f64], uw: f64) -> f64 {
    let sp = &o.spec;
    let m = sp.s_mean(x);
    let s0: Vec<f64> = (0..sp.d).map(|j| m[j] + u[j]).collect();
    let s1: Vec<f64> = (0..sp.d).map(|j| s0[j] + sp.c[j]).collect();
    let gamma = o.gamma_x(x);
    let pi = dgp_pi(o);
    let sigma2 = o.sigma2();
    let tau = sp.true_tau();
    let vx = o.varrho_x(x);
    let arm_weight = [1.0 - vx, vx];
    match o.model {
        ModelKind::LatentUnconfounded => {
            let base = sigma2 / o.rho(1, &s1, x) + sigma2 / o.rho(0, &s0, x);
            let contrast = o.mu_bar(1, x) - o.mu_bar(0, x) - tau;
            let spread: f64 = [(0, &s0), (1, &s1)]
                .iter()
                .map(|&(w, s)| {
                    let r = o.mu(w, s, x) - o.mu_bar(w, x);
                    r * r / arm_weight[w]
                })
                .sum();
            match target {
                Target::Tau1 => gamma / (pi * pi) * (base + contrast * contrast + gamma / (1.0 - gamma) * spread),
                Target::Tau0 => {
                    (1.0 - gamma) / ((1.0 - pi) * (1.0 - pi))
                        * ((1.0 - gamma) / gamma * base + contrast * contrast + spread)
                }
            }
        }
        ModelKind::Surrogacy => {
            let w_obs = uw < sigmoid(sp.phi * dot(&sp.kappa, u));
            let s = if w_obs { &s1 } else { &s0 };
            let gsx = o.gamma_sx(s, x);
            let score = (o.varrho_sx(s, x) - vx) / (vx * (1.0 - vx));
            let contrast = o.nu_bar(1, x) - o.nu_bar(0, x) - tau;
            let spread: f64 = [(0, &s0), (1, &s1)]
                .iter()
                .map(|&(w, s)| {
                    let r = o.nu(s, x) - o.nu_bar(w, x);
                    r * r / arm_weight[w]
                })
                .sum();
            match target {
                Target::Tau1 => {
                    let lead = gamma / gsx * (1.0 - gsx) / (1.0 - gamma) * score;
                    gamma / (pi * pi) * (lead * lead * sigma2 + contrast * contrast + gamma / (1.0 - gamma) * spread)
                }
                Target::Tau0 => {
                    let lead = (1.0 - gsx) / gsx * score;
                    let q = (1.0 - pi) * (1.0 - pi);
                    gamma / q * lead * lead * sigma2 + (1.0 - gamma) / q * (contrast * contrast + spread)
                }
            }
        }
    }
}

fn dgp_pi(o: &OracleNuisances) -> f64 {
    use crate::nuisance::NuisanceSource;
    o.pi()
}

/// Integrand values for draws `[chunk * BOUND_CHUNK, chunk * BOUND_CHUNK + count)`.
pub fn bound_chunk(o: &OracleNuisances, target: Target, key: StreamKey, chunk: u64, count: usize) -> Vec<f64> {
    let mut rng = key.index(chunk).rng();
    let sp = &o.spec;
    let mut x = Vec::with_capacity(sp.q);
    let mut u = Vec::with_capacity(sp.d);
    (0..count)
        .map(|_| {
            x.clear();
            u.clear();
            x.extend((0..sp.q).map(|_| rng.sample::<f64, _>(StandardNormal)));
            u.extend((0..sp.d).map(|_| sp.sigma_u * rng.sample::<f64, _>(StandardNormal)));
            let uw: f64 = rng.random();
            bound_integrand(o, target, &x, &u, uw)
        })
        .collect()
}

pub fn bound_key(seed: u64) -> StreamKey {
    StreamKey::new(seed).child("bound")
}

/// Number of chunks covering `n_draws`, with the size of each.
pub fn chunk_sizes(n_draws: usize) -> Vec<usize> {
    let full = n_draws / BOUND_CHUNK;
    let mut sizes = alloc::vec![BOUND_CHUNK; full];
    if !n_draws.is_multiple_of(BOUND_CHUNK) {
        sizes.push(n_draws % BOUND_CHUNK);
    }
    sizes
}

/// Monte Carlo estimate of the efficiency bound for `(target, model)`.
pub fn compute_bound(spec: &DgpSpec, target: Target, model: ModelKind, n_draws: usize, seed: u64) -> Result<BoundReport, EfficiencyError> {
    if n_draws < 2 {
        return Err(EfficiencyError::TooFewDraws);
    }
    let o = dgp::oracle(spec, model)?;
    let key = bound_key(seed);
    let mut values = Vec::with_capacity(n_draws);
    for (c, &len) in chunk_sizes(n_draws).iter().enumerate() {
        values.extend(bound_chunk(&o, target, key, c as u64, len));
    }
    Ok(BoundReport::from_values(&values, target, model))
}

/// A nuisance function that a perturbation can move.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Mu0,
    Mu1,
    MuBar0,
    MuBar1,
    Rho0,
    Rho1,
    VarrhoX,
    GammaX,
    Nu,
    NuBar0,
    NuBar1,
    VarrhoSx,
    GammaSx,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Mu0 => "mu0",
            Component::Mu1 => "mu1",
            Component::MuBar0 => "mu_bar0",
            Component::MuBar1 => "mu_bar1",
            Component::Rho0 => "rho0",
            Component::Rho1 => "rho1",
            Component::VarrhoX => "varrho_x",
            Component::GammaX => "gamma_x",
            Component::Nu => "nu",
            Component::NuBar0 => "nu_bar0",
            Component::NuBar1 => "nu_bar1",
            Component::VarrhoSx => "varrho_sx",
            Component::GammaSx => "gamma_sx",
        }
    }

    pub fn is_probability(self) -> bool {
        matches!(
            self,
            Component::Rho0 | Component::Rho1 | Component::VarrhoX | Component::GammaX | Component::VarrhoSx | Component::GammaSx
        )
    }

    fn depends_on_s(self) -> bool {
        matches!(self, Component::Mu0 | Component::Mu1 | Component::Rho0 | Component::Rho1 | Component::Nu | Component::VarrhoSx | Component::GammaSx)
    }
}

/// Spatial profile `h(s, x)` of a perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Constant,
    /// `tanh` of the sum of the component's inputs.
    Tanh,
}

/// How `t * scale * h` enters the component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Additive,
    /// `f * (1 + t * scale * h)`.
    Multiplicative,
    /// `sigmoid(logit(f) + t * scale * h)`; keeps probabilities inside (0, 1).
    LogOdds,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub component: Component,
    #[serde(default)]
    pub shape: Shape,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Perturbation {
    pub fn new(component: Component, shape: Shape, mode: Mode) -> Self {
        Perturbation { component, shape, mode, scale: 1.0 }
    }

    fn apply(&self, f: f64, t: f64, s: &[f64], x: &[f64]) -> Result<f64, EfficiencyError> {
        let h = match self.shape {
            Shape::Constant => 1.0,
            Shape::Tanh => {
                let mut z: f64 = x.iter().sum();
                if self.component.depends_on_s() {
                    z += s.iter().sum::<f64>();
                }
                libm::tanh(z)
            }
        };
        let e = t * self.scale * h;
        let out = match self.mode {
            Mode::Additive => f + e,
            Mode::Multiplicative => f * (1.0 + e),
            Mode::LogOdds => sigmoid(math::logit(f) + e),
        };
        if self.component.is_probability() && !(out > 0.0 && out < 1.0) {
            return Err(EfficiencyError::PerturbationOutOfRange { component: self.component.name(), t });
        }
        Ok(out)
    }
}

/// Applies every perturbation in `direction` at step `t`.
pub fn perturb(values: &mut NuisanceValues, direction: &[Perturbation], t: f64, s: &[f64], x: &[f64]) -> Result<(), EfficiencyError> {
    for p in direction {
        let mismatch = |model| EfficiencyError::ComponentMismatch { component: p.component.name(), model };
        let slot: &mut f64 = match values {
            NuisanceValues::Lut(v) => match p.component {
                Component::Mu0 => &mut v.mu[0],
                Component::Mu1 => &mut v.mu[1],
                Component::MuBar0 => &mut v.mu_bar[0],
                Component::MuBar1 => &mut v.mu_bar[1],
                Component::Rho0 => &mut v.rho[0],
                Component::Rho1 => &mut v.rho[1],
                Component::VarrhoX => &mut v.varrho_x,
                Component::GammaX => &mut v.gamma_x,
                _ => return Err(mismatch(ModelKind::LatentUnconfounded)),
            },
            NuisanceValues::Surrogacy(v) => match p.component {
                Component::Nu => &mut v.nu,
                Component::NuBar0 => &mut v.nu_bar[0],
                Component::NuBar1 => &mut v.nu_bar[1],
                Component::VarrhoSx => &mut v.varrho_sx,
                Component::VarrhoX => &mut v.varrho_x,
                Component::GammaSx => &mut v.gamma_sx,
                Component::GammaX => &mut v.gamma_x,
                _ => return Err(mismatch(ModelKind::Surrogacy)),
            },
        };
        *slot = p.apply(*slot, t, s, x)?;
    }
    Ok(())
}

/// Moment whose expectation is differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "estimator")]
pub enum AuditMoment {
    Eif,
    NonOrthogonal(EstimatorKind),
}

impl AuditMoment {
    pub fn name(self) -> String {
        match self {
            AuditMoment::Eif => "eif".to_string(),
            AuditMoment::NonOrthogonal(k) => k.name().to_string(),
        }
    }

    /// The efficient moment and the weighting moment of a model.
    pub fn defaults(model: ModelKind) -> [AuditMoment; 2] {
        match model {
            ModelKind::LatentUnconfounded => [AuditMoment::Eif, AuditMoment::NonOrthogonal(EstimatorKind::WeightLut)],
            ModelKind::Surrogacy => [AuditMoment::Eif, AuditMoment::NonOrthogonal(EstimatorKind::WeightSur)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub target: Target,
    pub moments: Vec<AuditMoment>,
    /// Base step `h`; the stencil uses `t` in `{-2h, -h, h, 2h}`.
    pub step: f64,
    pub n_draws: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub moment: String,
    pub direction: String,
    /// Richardson-extrapolated central difference of the mean moment at `t = 0`.
    pub derivative: f64,
    pub se: f64,
    pub n_draws: usize,
}

impl AuditResult {
    /// `|derivative| / se`.
    pub fn z(&self) -> f64 {
        (self.derivative / self.se).abs()
    }
}

pub fn direction_label(direction: &[Perturbation]) -> String {
    let mut out = String::new();
    for (i, p) in direction.iter().enumerate() {
        if i > 0 {
            out.push('+');
        }
        out.push_str(p.component.name());
        out.push(':');
        out.push_str(match p.shape {
            Shape::Constant => "const",
            Shape::Tanh => "tanh",
        });
        out.push(':');
        out.push_str(match p.mode {
            Mode::Additive => "add",
            Mode::Multiplicative => "mul",
            Mode::LogOdds => "logodds",
        });
    }
    out
}

/// Finite-difference derivative of each moment's expectation along
/// `direction`, at the true effect and on common random draws.
pub fn audit_orthogonality(
    spec: &DgpSpec,
    model: ModelKind,
    direction: &[Perturbation],
    opts: &AuditOptions,
) -> Result<Vec<AuditResult>, EfficiencyError> {
    use crate::nuisance::NuisanceSource;
    if opts.n_draws < 2 {
        return Err(EfficiencyError::TooFewDraws);
    }
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(EfficiencyError::InvalidSpec("finite-difference step must be positive".to_string()));
    }
    let o = dgp::oracle(spec, model)?;
    let sample = dgp::sample_with_key(spec, opts.n_draws, model, StreamKey::new(opts.seed).child("audit"))?;
    let ds = &sample.dataset;
    let tau = spec.true_tau();
    let pi = o.pi();
    let h = opts.step;
    let grid = [-2.0 * h, -h, h, 2.0 * h];
    let label = direction_label(direction);

    let mut per_moment: Vec<Vec<f64>> = opts.moments.iter().map(|_| Vec::with_capacity(ds.n())).collect();
    for obs in ds.iter() {
        let base = o.evaluate(&obs);
        let mut at = alloc::vec![[0.0f64; 4]; opts.moments.len()];
        for (gi, &t) in grid.iter().enumerate() {
            let mut v = base;
            perturb(&mut v, direction, t, obs.s, obs.x)?;
            for (mi, m) in opts.moments.iter().enumerate() {
                let (a, b) = match m {
                    AuditMoment::Eif => eif_parts(&obs, &v, pi, opts.target)?,
                    AuditMoment::NonOrthogonal(kind) => nonorth_parts(*kind, &obs, &v, pi)?,
                };
                at[mi][gi] = a - tau * b;
            }
        }
        for (mi, store) in per_moment.iter_mut().enumerate() {
            let m = &at[mi];
            let d1 = (m[2] - m[1]) / (2.0 * h);
            let d2 = (m[3] - m[0]) / (4.0 * h);
            store.push((4.0 * d1 - d2) / 3.0);
        }
    }
    Ok(opts
        .moments
        .iter()
        .zip(per_moment)
        .map(|(m, d)| {
            let (derivative, se) = math::mean_and_se(&d);
            AuditResult { moment: m.name(), direction: label.clone(), derivative, se, n_draws: d.len() }
        })
        .collect())
}
