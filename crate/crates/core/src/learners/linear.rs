use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_clip_eps, check_inputs, FeatureMap, LearnerError, Predict, ProbabilityBase, ProbabilityFit, CHOLESKY_JITTER};
use crate::linalg::{add_outer_upper, solve_spd, symmetrize_from_upper};
use crate::math::dot;

const REFINE_STEPS: usize = 2;

/// Sieve least-squares fit `x -> coefficients . features(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub features: FeatureMap,
    pub coefficients: Vec<f64>,
    pub ridge_lambda: f64,
    /// Set when the normal equations needed the diagonal jitter to factor.
    pub jittered: bool,
}

impl Predict for LinearFit {
    fn input_dim(&self) -> usize {
        self.features.input_dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.coefficients.len());
        self.features.expand_into(x, &mut buf);
        dot(&buf, &self.coefficients)
    }
}

impl LinearFit {
    /// Euclidean norm of the non-constant coefficients.
    pub fn slope_norm(&self) -> f64 {
        libm::sqrt(self.coefficients[1..].iter().map(|c| c * c).sum())
    }
}

/// Minimizes `sum_i (y_i - b . f(x_i))^2 + lambda * |b_{1..}|^2` (the constant is
/// not penalized).
///
/// Fails with [`LearnerError::SingularSystem`] when `lambda = 0` and there are
/// fewer rows than features, or when the normal equations cannot be factored
/// even after adding a relative diagonal jitter of [`CHOLESKY_JITTER`].
pub fn fit_least_squares(
    map: &FeatureMap,
    inputs: &[&[f64]],
    y: &[f64],
    lambda: f64,
) -> Result<LinearFit, LearnerError> {
    check_inputs(map, inputs, y.len())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LearnerError::InvalidParameter("ridge lambda must be finite and non-negative"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(LearnerError::NonFiniteValue);
    }
    let p = map.output_dim();
    if lambda == 0.0 && inputs.len() < p {
        return Err(LearnerError::SingularSystem);
    }
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut f = Vec::with_capacity(p);
    for (row, &yi) in inputs.iter().zip(y) {
        map.expand_into(row, &mut f);
        add_outer_upper(&mut gram, &f, 1.0);
        for (r, fv) in rhs.iter_mut().zip(&f) {
            *r += fv * yi;
        }
    }
    symmetrize_from_upper(&mut gram, p);
    for a in 1..p {
        gram[a * p + a] += lambda;
    }
    let sol = solve_spd(&gram, &rhs, p, CHOLESKY_JITTER).ok_or(LearnerError::SingularSystem)?;
    let mut coefficients = sol.x;
    if !sol.jittered {
        // refine against the row residuals, which the normal equations only see squared
        for _ in 0..REFINE_STEPS {
            let mut grad = vec![0.0; p];
            for (row, &yi) in inputs.iter().zip(y) {
                map.expand_into(row, &mut f);
                let r = yi - dot(&f, &coefficients);
                for (gv, fv) in grad.iter_mut().zip(&f) {
                    *gv += fv * r;
                }
            }
            for a in 1..p {
                grad[a] -= lambda * coefficients[a];
            }
            if grad.iter().all(|g| *g == 0.0) {
                break;
            }
            let Some(step) = solve_spd(&gram, &grad, p, CHOLESKY_JITTER) else { break };
            for (c, s) in coefficients.iter_mut().zip(&step.x) {
                *c += s;
            }
        }
    }
    Ok(LinearFit { features: map.clone(), coefficients, ridge_lambda: lambda, jittered: sol.jittered })
}

/// Linear-probability sieve fit of binary labels by squared loss, with
/// predictions clipped into `[clip_eps, 1 - clip_eps]`.
pub fn fit_probability_ls(
    map: &FeatureMap,
    inputs: &[&[f64]],
    labels: &[bool],
    lambda: f64,
    clip_eps: f64,
) -> Result<ProbabilityFit, LearnerError> {
    check_clip_eps(clip_eps)?;
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let fit = fit_least_squares(map, inputs, &y, lambda)?;
    Ok(ProbabilityFit { base: ProbabilityBase::Linear(fit), clip_eps })
}
