use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_inputs, FeatureMap, LearnerError, Predict};
use crate::linalg::{add_outer_upper, solve_spd, symmetrize_from_upper};
use crate::math::{dot, sigmoid, softplus};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticOptions {
    pub max_iter: usize,
    /// Convergence threshold on the sup-norm of the mean log-likelihood gradient.
    pub tol: f64,
    /// Coefficient norm beyond which the likelihood is treated as unbounded.
    pub separation_cap: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions { max_iter: 100, tol: 1e-8, separation_cap: 1e3 }
    }
}

/// Logistic regression `P(label = 1 | x) = sigmoid(coefficients . features(x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub features: FeatureMap,
    pub coefficients: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Predict for LogisticFit {
    fn input_dim(&self) -> usize {
        self.features.input_dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.coefficients.len());
        self.features.expand_into(x, &mut buf);
        sigmoid(dot(&buf, &self.coefficients))
    }
}

fn design(map: &FeatureMap, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
    inputs.iter().map(|r| {
        let mut f = Vec::with_capacity(map.output_dim());
        map.expand_into(r, &mut f);
        f
    }).collect()
}

fn mean_nll(features: &[Vec<f64>], labels: &[bool], beta: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (f, &l) in features.iter().zip(labels) {
        let t = dot(f, beta);
        // -log sigmoid(t) = softplus(-t), -log(1 - sigmoid(t)) = softplus(t)
        acc += if l { softplus(-t) } else { softplus(t) };
    }
    acc / features.len() as f64
}

fn mean_gradient(features: &[Vec<f64>], labels: &[bool], beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; beta.len()];
    for (f, &l) in features.iter().zip(labels) {
        let r = sigmoid(dot(f, beta)) - if l { 1.0 } else { 0.0 };
        for (gj, fj) in g.iter_mut().zip(f) {
            *gj += r * fj;
        }
    }
    let n = features.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Mean negative log-likelihood at `beta`.
pub fn logistic_nll(map: &FeatureMap, inputs: &[&[f64]], labels: &[bool], beta: &[f64]) -> f64 {
    mean_nll(&design(map, inputs), labels, beta)
}

/// Gradient of [`logistic_nll`] with respect to `beta`.
pub fn logistic_gradient(map: &FeatureMap, inputs: &[&[f64]], labels: &[bool], beta: &[f64]) -> Vec<f64> {
    mean_gradient(&design(map, inputs), labels, beta)
}

/// Maximum-likelihood logistic regression by damped Newton steps.
///
/// Each step solves the Newton system (adding `1e-8` to the diagonal when the
/// Hessian does not factor) and halves the step until the likelihood does not
/// decrease. Separable labels are reported as [`LearnerError::Separation`],
/// either once the coefficient norm passes `separation_cap` or when the
/// gradient vanishes at a point that classifies every row correctly (a finite
/// maximizer cannot do that).
pub fn fit_logistic(
    map: &FeatureMap,
    inputs: &[&[f64]],
    labels: &[bool],
    options: &LogisticOptions,
) -> Result<LogisticFit, LearnerError> {
    check_inputs(map, inputs, labels.len())?;
    if options.max_iter == 0 || !(options.tol > 0.0) || !(options.separation_cap > 0.0) {
        return Err(LearnerError::InvalidParameter("logistic options must be positive"));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    if n1 == 0 || n1 == labels.len() {
        return Err(LearnerError::SingleClass);
    }
    let features = design(map, inputs);
    let p = map.output_dim();
    let n = features.len() as f64;

    let mut beta = vec![0.0; p];
    // start from the marginal log-odds
    let share = n1 as f64 / n;
    beta[0] = libm::log(share / (1.0 - share));
    let mut nll = mean_nll(&features, labels, &beta);
    let mut hess = vec![0.0; p * p];

    for iter in 0..options.max_iter {
        let grad = mean_gradient(&features, labels, &beta);
        let sup = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if sup < options.tol {
            let norm = libm::sqrt(beta.iter().map(|b| b * b).sum());
            let separated = features.iter().zip(labels).all(|(f, &l)| {
                let t = dot(f, &beta);
                if l { t > 0.0 } else { t < 0.0 }
            });
            if separated || norm > options.separation_cap {
                return Err(LearnerError::Separation { norm });
            }
            return Ok(LogisticFit {
                features: map.clone(),
                coefficients: beta,
                max_iter: options.max_iter,
                tol: options.tol,
                iterations: iter,
                converged: true,
            });
        }

        hess.iter_mut().for_each(|h| *h = 0.0);
        for f in &features {
            let pr = sigmoid(dot(f, &beta));
            add_outer_upper(&mut hess, f, pr * (1.0 - pr) / n);
        }
        symmetrize_from_upper(&mut hess, p);
        let step = match solve_spd(&hess, &grad, p, 1e-8) {
            Some(s) => s.x,
            None => {
                // flat likelihood: fall back to a gradient step
                grad.clone()
            }
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            let cand_nll = mean_nll(&features, labels, &cand);
            if cand_nll <= nll || (cand_nll - nll).abs() <= 1e-15 * nll.abs().max(1.0) {
                beta = cand;
                nll = cand_nll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        let norm = libm::sqrt(beta.iter().map(|b| b * b).sum());
        if norm > options.separation_cap || nll < 1e-12 {
            return Err(LearnerError::Separation { norm });
        }
        if !accepted {
            let grad = mean_gradient(&features, labels, &beta);
            let sup = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            return Err(LearnerError::NoConvergence { iterations: iter + 1, grad_norm: sup });
        }
    }
    let grad = mean_gradient(&features, labels, &beta);
    let sup = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    Err(LearnerError::NoConvergence { iterations: options.max_iter, grad_norm: sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use rand::Rng;

    #[test]
    fn symmetric_independent_labels_give_zero_coefficients() {
        // every x appears once with each label
        let xs: Vec<[f64; 1]> = (-3..=3).flat_map(|i| [[i as f64], [i as f64]]).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
        let labels: Vec<bool> = (0..xs.len()).map(|i| i % 2 == 0).collect();
        let fit = fit_logistic(&FeatureMap::new(1, 1, true), &inputs, &labels, &LogisticOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-8));
    }

    #[test]
    fn separated_labels_are_detected() {
        let xs: Vec<[f64; 1]> = (0..20).map(|i| [i as f64 - 9.5]).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
        let labels: Vec<bool> = xs.iter().map(|x| x[0] > 0.0).collect();
        let err = fit_logistic(&FeatureMap::new(1, 1, true), &inputs, &labels, &LogisticOptions::default()).unwrap_err();
        assert!(matches!(err, LearnerError::Separation { .. }), "{err:?}");
        assert_eq!(
            fit_logistic(&FeatureMap::new(1, 1, true), &inputs, &[true; 20], &LogisticOptions::default()).unwrap_err(),
            LearnerError::SingleClass
        );
    }

    #[test]
    fn recovers_coefficients_on_large_sample() {
        let mut rng = StreamKey::new(7).child("logistic").rng();
        let n = 100_000;
        let xs: Vec<[f64; 1]> = (0..n).map(|_| [rng.random::<f64>() * 4.0 - 2.0]).collect();
        let labels: Vec<bool> = xs.iter().map(|x| rng.random::<f64>() < sigmoid(1.0 + 2.0 * x[0])).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
        let fit = fit_logistic(&FeatureMap::new(1, 1, true), &inputs, &labels, &LogisticOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 0.05, "{:?}", fit.coefficients);
        assert!((fit.coefficients[1] - 2.0).abs() < 0.05, "{:?}", fit.coefficients);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let mut rng = StreamKey::new(3).rng();
        let xs: Vec<[f64; 2]> = (0..500).map(|_| [rng.random::<f64>() - 0.5, rng.random::<f64>()]).collect();
        let labels: Vec<bool> = xs.iter().map(|x| rng.random::<f64>() < sigmoid(x[0] - x[1])).collect();
        let inputs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
        let map = FeatureMap::new(2, 2, true);
        let beta = [0.3, -0.2, 0.5, 0.1, -0.4, 0.2];
        let g = logistic_gradient(&map, &inputs, &labels, &beta);
        let h = 1e-5;
        for j in 0..beta.len() {
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd = (logistic_nll(&map, &inputs, &labels, &up) - logistic_nll(&map, &inputs, &labels, &dn)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-3), "j={j} fd={fd} g={}", g[j]);
        }
    }
}
