//! Linear-Gaussian data-generating process with a confounding knob and exact
//! oracle nuisance functions.
//!
//! For each unit: `X ~ N(0, I_q)`, `u ~ N(0, sigma_u^2 I_d)`,
//! `S(w) = a + B x + c w + u`, `Y(w) = alpha + theta w + beta . S(w) + delta . x + eps`
//! with `eps ~ N(0, sigma_eps^2)`. Units join the observational sample with
//! probability `gamma(x) = sigmoid(logit(pi0) + selection . x)`. Experimental
//! treatment is a fair coin; observational treatment is
//! `Bernoulli(sigmoid(phi * kappa . u))`, so confounding runs through the
//! short-term outcomes only and the true effect is `theta + beta . c` in both
//! populations.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError, ModelKind, Observation, Record, Target};
use crate::linalg::Matrix;
use crate::math::{self, dot, sigmoid, softplus};
use crate::nuisance::{LutValues, NuisanceSource, NuisanceValues, SurrogacyValues};
use crate::rng::StreamKey;

const CHUNK: usize = 1024;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DgpError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub q: usize,
    pub d: usize,
    pub a: Vec<f64>,
    /// `d` rows of length `q`.
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub alpha: f64,
    pub theta: f64,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma_u: f64,
    pub sigma_eps: f64,
    pub pi0: f64,
    pub phi: f64,
    pub kappa: Vec<f64>,
    /// Log-odds slope of sample membership on `x` (all zero: `G` independent of `X`).
    pub selection: Vec<f64>,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            q: 3,
            d: 2,
            a: vec![0.5, -0.5],
            b: vec![vec![0.5, -0.3, 0.2], vec![0.1, 0.4, -0.2]],
            c: vec![1.0, 1.0],
            alpha: 1.0,
            theta: 0.5,
            beta: vec![1.0, 0.5],
            delta: vec![0.5, -0.25, 0.3],
            sigma_u: 1.0,
            sigma_eps: 1.0,
            pi0: 0.5,
            phi: 0.0,
            kappa: vec![1.0, 1.0],
            selection: vec![0.0; 3],
            seed: 0,
        }
    }
}

impl DgpSpec {
    /// Default coefficients for a model; the surrogacy default has no direct effect.
    pub fn default_for(model: ModelKind) -> Self {
        match model {
            ModelKind::LatentUnconfounded => DgpSpec::default(),
            ModelKind::Surrogacy => DgpSpec { theta: 0.0, ..DgpSpec::default() },
        }
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, model: ModelKind) -> Result<(), DgpError> {
        let bad = |m: String| Err(DgpError::InvalidSpec(m));
        if self.d == 0 {
            return bad("d must be at least 1".to_string());
        }
        for (name, v, len) in [
            ("a", &self.a, self.d),
            ("c", &self.c, self.d),
            ("beta", &self.beta, self.d),
            ("kappa", &self.kappa, self.d),
            ("delta", &self.delta, self.q),
            ("selection", &self.selection, self.q),
        ] {
            if v.len() != len {
                return bad(format!("{name} has length {}, expected {len}", v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(format!("{name} has non-finite entries"));
            }
        }
        if self.b.len() != self.d || self.b.iter().any(|r| r.len() != self.q || r.iter().any(|v| !v.is_finite())) {
            return bad(format!("b must be a finite {} x {} matrix", self.d, self.q));
        }
        if !(self.sigma_u >= 0.0 && self.sigma_u.is_finite() && self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return bad("noise scales must be finite and non-negative".to_string());
        }
        if !(self.pi0 > 0.0 && self.pi0 < 1.0) {
            return bad("pi0 must lie in (0, 1)".to_string());
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return bad("phi must be finite and non-negative".to_string());
        }
        if !self.alpha.is_finite() || !self.theta.is_finite() {
            return bad("alpha and theta must be finite".to_string());
        }
        if model == ModelKind::Surrogacy && self.theta != 0.0 {
            return bad("the surrogacy model requires theta = 0".to_string());
        }
        Ok(())
    }

    /// `theta + beta . c`.
    pub fn true_tau(&self) -> f64 {
        self.theta + dot(&self.beta, &self.c)
    }

    /// `a + B x`.
    pub fn s_mean(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d).map(|j| self.a[j] + dot(&self.b[j], x)).collect()
    }

    pub fn gamma_x(&self, x: &[f64]) -> f64 {
        sigmoid(math::logit(self.pi0) + dot(&self.selection, x))
    }

    /// `P(G = 1)`: `pi0` without selection on `x`, otherwise a quadrature of
    /// `gamma(x)` over the Gaussian law of `selection . X`.
    pub fn pi(&self) -> f64 {
        let scale = libm::sqrt(self.selection.iter().map(|v| v * v).sum());
        if scale == 0.0 {
            return self.pi0;
        }
        let base = math::logit(self.pi0);
        let m = 8000;
        let h = 20.0 / m as f64;
        let mut acc = 0.0;
        for i in 0..=m {
            let z = -10.0 + i as f64 * h;
            let wgt = if i == 0 || i == m { 0.5 } else { 1.0 };
            acc += wgt * sigmoid(base + scale * z) * math::normal_pdf(z);
        }
        acc * h
    }
}

/// Unobserved potential outcomes behind a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialOutcomes {
    pub g: Vec<bool>,
    /// Realized treatment, including on rows where the dataset hides it.
    pub w: Vec<bool>,
    pub s0: Matrix,
    pub s1: Matrix,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub x: Matrix,
}

impl PotentialOutcomes {
    /// Monte Carlo mean of `Y(1) - Y(0)` over the target population, with its standard error.
    pub fn mc_tau(&self, target: Target) -> (f64, f64) {
        let want = target == Target::Tau1;
        let diffs: Vec<f64> = (0..self.g.len()).filter(|&i| self.g[i] == want).map(|i| self.y1[i] - self.y0[i]).collect();
        math::mean_and_se(&diffs)
    }

    pub fn to_table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let d = self.s0.cols();
        let q = self.x.cols();
        let mut header = vec!["g".to_string(), "w".to_string(), "y0".to_string(), "y1".to_string()];
        header.extend((1..=d).map(|j| format!("s0_{j}")));
        header.extend((1..=d).map(|j| format!("s1_{j}")));
        header.extend((1..=q).map(|j| format!("x_{j}")));
        let rows = (0..self.g.len())
            .map(|i| {
                let mut r = vec![
                    if self.g[i] { "1" } else { "0" }.to_string(),
                    if self.w[i] { "1" } else { "0" }.to_string(),
                    format!("{}", self.y0[i]),
                    format!("{}", self.y1[i]),
                ];
                r.extend(self.s0.row(i).iter().map(|v| format!("{v}")));
                r.extend(self.s1.row(i).iter().map(|v| format!("{v}")));
                r.extend(self.x.row(i).iter().map(|v| format!("{v}")));
                r
            })
            .collect();
        (header, rows)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub dataset: Dataset,
    pub potential: PotentialOutcomes,
}

struct Unit {
    g: bool,
    w: bool,
    x: Vec<f64>,
    s0: Vec<f64>,
    s1: Vec<f64>,
    y0: f64,
    y1: f64,
}

fn draw_unit<R: Rng>(spec: &DgpSpec, rng: &mut R) -> Unit {
    let x: Vec<f64> = (0..spec.q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let u: Vec<f64> = (0..spec.d).map(|_| spec.sigma_u * rng.sample::<f64, _>(StandardNormal)).collect();
    let eps = spec.sigma_eps * rng.sample::<f64, _>(StandardNormal);
    let ug: f64 = rng.random();
    let uw: f64 = rng.random();
    let m = spec.s_mean(&x);
    let s0: Vec<f64> = (0..spec.d).map(|j| m[j] + u[j]).collect();
    let s1: Vec<f64> = (0..spec.d).map(|j| m[j] + spec.c[j] + u[j]).collect();
    let base = spec.alpha + dot(&spec.delta, &x) + eps;
    let y0 = base + dot(&spec.beta, &s0);
    let y1 = base + spec.theta + dot(&spec.beta, &s1);
    let g = ug < spec.gamma_x(&x);
    let pw = if g { sigmoid(spec.phi * dot(&spec.kappa, &u)) } else { 0.5 };
    Unit { g, w: uw < pw, x, s0, s1, y0, y1 }
}

/// Draws `n` units; the stream for chunk `c` of 1024 units is keyed by
/// `(seed, "data", c)`.
pub fn sample(spec: &DgpSpec, n: usize, model: ModelKind) -> Result<Sample, DgpError> {
    sample_with_key(spec, n, model, StreamKey::new(spec.seed).child("data"))
}

pub fn sample_with_key(spec: &DgpSpec, n: usize, model: ModelKind, key: StreamKey) -> Result<Sample, DgpError> {
    spec.validate(model)?;
    let (d, q) = (spec.d, spec.q);
    let mut records = Vec::with_capacity(n);
    let mut po = PotentialOutcomes {
        g: Vec::with_capacity(n),
        w: Vec::with_capacity(n),
        s0: Matrix::zeros(n, d),
        s1: Matrix::zeros(n, d),
        y0: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        x: Matrix::zeros(n, q),
    };
    let mut i = 0;
    let mut chunk = 0u64;
    while i < n {
        let mut rng = key.index(chunk).rng();
        let end = (i + CHUNK).min(n);
        while i < end {
            let unit = draw_unit(spec, &mut rng);
            let s = if unit.w { unit.s1.clone() } else { unit.s0.clone() };
            let y = if unit.w { unit.y1 } else { unit.y0 };
            let w_seen = match model {
                ModelKind::LatentUnconfounded => Some(unit.w),
                ModelKind::Surrogacy => (!unit.g).then_some(unit.w),
            };
            records.push(Record { g: unit.g, w: w_seen, y: unit.g.then_some(y), s, x: unit.x.clone() });
            po.g.push(unit.g);
            po.w.push(unit.w);
            po.s0.row_mut(i).copy_from_slice(&unit.s0);
            po.s1.row_mut(i).copy_from_slice(&unit.s1);
            po.x.row_mut(i).copy_from_slice(&unit.x);
            po.y0.push(unit.y0);
            po.y1.push(unit.y1);
            i += 1;
        }
        chunk += 1;
    }
    let dataset = Dataset::new(model, d, q, records)?;
    Ok(Sample { dataset, potential: po })
}

/// Exact nuisance functions of a [`DgpSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleNuisances {
    pub spec: DgpSpec,
    pub model: ModelKind,
    pi: f64,
}

/// Exact nuisances; requires `sigma_u > 0` so the short-term densities exist.
pub fn oracle(spec: &DgpSpec, model: ModelKind) -> Result<OracleNuisances, DgpError> {
    spec.validate(model)?;
    if !(spec.sigma_u > 0.0) {
        return Err(DgpError::InvalidSpec("oracle densities need sigma_u > 0".to_string()));
    }
    Ok(OracleNuisances { spec: spec.clone(), model, pi: spec.pi() })
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

impl OracleNuisances {
    fn residuals(&self, s: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.spec.s_mean(x);
        let u0: Vec<f64> = (0..self.spec.d).map(|j| s[j] - m[j]).collect();
        let u1: Vec<f64> = (0..self.spec.d).map(|j| u0[j] - self.spec.c[j]).collect();
        (u0, u1)
    }

    fn sq(&self, u: &[f64]) -> f64 {
        u.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.spec.sigma_u * self.spec.sigma_u)
    }

    pub fn mu(&self, arm: usize, s: &[f64], x: &[f64]) -> f64 {
        let sp = &self.spec;
        sp.alpha + sp.theta * arm as f64 + dot(&sp.beta, s) + dot(&sp.delta, x)
    }

    pub fn mu_bar(&self, arm: usize, x: &[f64]) -> f64 {
        let sp = &self.spec;
        let m = sp.s_mean(x);
        let es: Vec<f64> = (0..sp.d).map(|j| m[j] + sp.c[j] * arm as f64).collect();
        sp.alpha + sp.theta * arm as f64 + dot(&sp.beta, &es) + dot(&sp.delta, x)
    }

    /// Surrogate index `E[Y | s, x, G = 1]` (equals `mu` with `theta = 0`).
    pub fn nu(&self, s: &[f64], x: &[f64]) -> f64 {
        let sp = &self.spec;
        sp.alpha + dot(&sp.beta, s) + dot(&sp.delta, x)
    }

    pub fn nu_bar(&self, arm: usize, x: &[f64]) -> f64 {
        self.mu_bar(arm, x) - self.spec.theta * arm as f64
    }

    pub fn rho(&self, arm: usize, s: &[f64], x: &[f64]) -> f64 {
        let (u0, u1) = self.residuals(s, x);
        let k = &self.spec.kappa;
        if arm == 1 {
            sigmoid(self.spec.phi * dot(k, &u1))
        } else {
            1.0 - sigmoid(self.spec.phi * dot(k, &u0))
        }
    }

    pub fn varrho_x(&self, _x: &[f64]) -> f64 {
        0.5
    }

    pub fn varrho_sx(&self, s: &[f64], x: &[f64]) -> f64 {
        let (u0, u1) = self.residuals(s, x);
        sigmoid(self.sq(&u0) - self.sq(&u1))
    }

    pub fn gamma_x(&self, x: &[f64]) -> f64 {
        self.spec.gamma_x(x)
    }

    pub fn gamma_sx(&self, s: &[f64], x: &[f64]) -> f64 {
        let (u0, u1) = self.residuals(s, x);
        let k = &self.spec.kappa;
        let (l1, l0) = (-self.sq(&u1), -self.sq(&u0));
        let t1 = self.spec.phi * dot(k, &u1);
        let t0 = self.spec.phi * dot(k, &u0);
        // log f1 with log sigmoid(t) = -softplus(-t)
        let log_f1 = log_add(l1 - softplus(-t1), l0 - softplus(t0));
        let log_f0 = log_add(l1, l0) - core::f64::consts::LN_2;
        sigmoid(math::logit(self.gamma_x(x)) + log_f1 - log_f0)
    }

    /// Conditional variance of `Y(w)` (and of `Y`) given `(s, x)`.
    pub fn sigma2(&self) -> f64 {
        self.spec.sigma_eps * self.spec.sigma_eps
    }

    pub fn lut_values(&self, s: &[f64], x: &[f64]) -> LutValues {
        LutValues {
            mu: [self.mu(0, s, x), self.mu(1, s, x)],
            mu_bar: [self.mu_bar(0, x), self.mu_bar(1, x)],
            rho: [self.rho(0, s, x), self.rho(1, s, x)],
            varrho_x: self.varrho_x(x),
            gamma_x: self.gamma_x(x),
        }
    }

    pub fn surrogacy_values(&self, s: &[f64], x: &[f64]) -> SurrogacyValues {
        SurrogacyValues {
            nu: self.nu(s, x),
            nu_bar: [self.nu_bar(0, x), self.nu_bar(1, x)],
            varrho_sx: self.varrho_sx(s, x),
            varrho_x: self.varrho_x(x),
            gamma_sx: self.gamma_sx(s, x),
            gamma_x: self.gamma_x(x),
        }
    }
}

impl NuisanceSource for OracleNuisances {
    fn model(&self) -> ModelKind {
        self.model
    }

    fn pi(&self) -> f64 {
        self.pi
    }

    fn evaluate(&self, obs: &Observation<'_>) -> NuisanceValues {
        match self.model {
            ModelKind::LatentUnconfounded => NuisanceValues::Lut(self.lut_values(obs.s, obs.x)),
            ModelKind::Surrogacy => NuisanceValues::Surrogacy(self.surrogacy_values(obs.s, obs.x)),
        }
    }
}
