//! Regression and classification primitives behind every nuisance fit.
//!
//! Inputs are passed as slices of row slices so callers can fit on any subset
//! of a dataset (and on any column window of it) without copying.

mod features;
mod linear;
mod logistic;

pub use features::{default_degree, monomial_count, FeatureMap};
pub use linear::{fit_least_squares, fit_probability_ls, LinearFit};
pub use logistic::{fit_logistic, logistic_gradient, logistic_nll, LogisticFit, LogisticOptions};

use serde::{Deserialize, Serialize};

use crate::math;

/// Default clipping for fitted probabilities.
pub const DEFAULT_CLIP_EPS: f64 = 0.05;

/// Diagonal jitter, relative to the largest diagonal entry, used when a
/// normal-equations factorization fails.
pub const CHOLESKY_JITTER: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LearnerError {
    #[error("no training rows")]
    EmptyInput,
    #[error("{inputs} input rows but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("input has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite training value")]
    NonFiniteValue,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("normal equations are singular")]
    SingularSystem,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("labels are separable (coefficient norm {norm:.3e})")]
    Separation { norm: f64 },
    #[error("Newton iterations did not converge after {iterations} steps (gradient {grad_norm:.3e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },
}

/// Evaluation of a fitted function.
pub trait Predict {
    fn input_dim(&self) -> usize;

    /// Unchecked evaluation; `x.len()` must equal [`Predict::input_dim`].
    fn eval(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &[f64]) -> Result<f64, LearnerError> {
        if x.len() != self.input_dim() {
            return Err(LearnerError::DimensionMismatch { expected: self.input_dim(), found: x.len() });
        }
        Ok(self.eval(x))
    }

    fn predict_rows(&self, rows: &[&[f64]]) -> Result<alloc::vec::Vec<f64>, LearnerError> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbabilityBase {
    Linear(LinearFit),
    Logistic(LogisticFit),
}

/// A fitted probability whose predictions are clipped into `[clip_eps, 1 - clip_eps]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityFit {
    pub base: ProbabilityBase,
    pub clip_eps: f64,
}

impl ProbabilityFit {
    /// Probability before clipping (may leave `[0, 1]` for linear bases).
    pub fn raw(&self, x: &[f64]) -> f64 {
        match &self.base {
            ProbabilityBase::Linear(f) => f.eval(x),
            ProbabilityBase::Logistic(f) => f.eval(x),
        }
    }

    /// Whether the clip was active at `x`.
    pub fn is_clipped(&self, x: &[f64]) -> bool {
        let r = self.raw(x);
        !(r >= self.clip_eps && r <= 1.0 - self.clip_eps)
    }
}

impl Predict for ProbabilityFit {
    fn input_dim(&self) -> usize {
        match &self.base {
            ProbabilityBase::Linear(f) => f.input_dim(),
            ProbabilityBase::Logistic(f) => f.input_dim(),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        math::clip(self.raw(x), self.clip_eps)
    }
}

pub(crate) fn check_clip_eps(clip_eps: f64) -> Result<(), LearnerError> {
    if clip_eps > 0.0 && clip_eps < 0.5 {
        Ok(())
    } else {
        Err(LearnerError::InvalidParameter("clip_eps must lie in (0, 0.5)"))
    }
}

pub(crate) fn check_inputs(map: &FeatureMap, inputs: &[&[f64]], targets: usize) -> Result<(), LearnerError> {
    if inputs.is_empty() {
        return Err(LearnerError::EmptyInput);
    }
    if inputs.len() != targets {
        return Err(LearnerError::LengthMismatch { inputs: inputs.len(), targets });
    }
    for row in inputs {
        if row.len() != map.input_dim() {
            return Err(LearnerError::DimensionMismatch { expected: map.input_dim(), found: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFiniteValue);
        }
    }
    Ok(())
}

impl ProbabilityFit {
    /// Logistic probability fit, clipped.
    pub fn logistic(
        map: &FeatureMap,
        inputs: &[&[f64]],
        labels: &[bool],
        options: &LogisticOptions,
        clip_eps: f64,
    ) -> Result<Self, LearnerError> {
        check_clip_eps(clip_eps)?;
        let fit = fit_logistic(map, inputs, labels, options)?;
        Ok(ProbabilityFit { base: ProbabilityBase::Logistic(fit), clip_eps })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn probability_fit_clips_raw_values() {
        let linear = LinearFit {
            features: FeatureMap::new(1, 1, true),
            coefficients: vec![1.2, 0.0],
            ridge_lambda: 0.0,
            jittered: false,
        };
        let p = ProbabilityFit { base: ProbabilityBase::Linear(linear), clip_eps: 0.05 };
        assert_eq!(p.predict(&[3.0]).unwrap(), 0.95);
        assert!(p.is_clipped(&[3.0]));
        assert!(matches!(p.predict(&[]), Err(LearnerError::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_logit_predicts_one_half() {
        let fit = LogisticFit {
            features: FeatureMap::new(1, 1, true),
            coefficients: vec![0.0, 0.0],
            max_iter: 100,
            tol: 1e-8,
            iterations: 0,
            converged: true,
        };
        for x in [-5.0, 0.0, 12.0] {
            assert_eq!(fit.predict(&[x]).unwrap(), 0.5);
        }
    }
}
