//! Monte Carlo experiments over confounding strengths, sample sizes and
//! estimators, aggregated into bias / variance / RMSE / coverage cells.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{ModelKind, Target};
use crate::dgp::{self, DgpSpec};
use crate::estimators::{run_estimators, EstimateOptions, EstimatorKind, DEFAULT_ALPHA};
use crate::rng::StreamKey;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment grid: {0}")]
    InvalidGrid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentGrid {
    pub spec: DgpSpec,
    pub model: ModelKind,
    pub target: Target,
    pub phis: Vec<f64>,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub estimators: Vec<EstimatorKind>,
    pub alpha: f64,
    pub seed: u64,
    /// Folds, learner and `pi` handling; `alpha` and `seed` inside are overridden per rep.
    pub options: EstimateOptions,
    /// Reuse one data stream for every rep (a degenerate check of the aggregation).
    pub share_substreams: bool,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            spec: DgpSpec::default(),
            model: ModelKind::LatentUnconfounded,
            target: Target::Tau1,
            phis: vec![0.0, 0.5, 0.66],
            sizes: vec![4000],
            reps: 100,
            estimators: vec![EstimatorKind::DmlLut, EstimatorKind::WeightLut, EstimatorKind::DiffMeans],
            alpha: DEFAULT_ALPHA,
            seed: 0,
            options: EstimateOptions::default(),
            share_substreams: false,
        }
    }
}

impl ExperimentGrid {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidGrid(m));
        if self.reps < 2 {
            return bad("reps must be at least 2".to_string());
        }
        if self.phis.is_empty() || self.sizes.is_empty() || self.estimators.is_empty() {
            return bad("phis, sizes and estimators must be non-empty".to_string());
        }
        if let Some(k) = self.estimators.iter().find(|k| **k != EstimatorKind::DiffMeans && k.model() != self.model) {
            return bad(format!("{} is incompatible with the {} model", k.name(), self.model));
        }
        if self.model == ModelKind::Surrogacy && self.estimators.contains(&EstimatorKind::DiffMeans) {
            return bad("diff_means needs observed treatment in the observational sample".to_string());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)".to_string());
        }
        for &phi in &self.phis {
            self.spec.clone().with_phi(phi).validate(self.model).map_err(|e| HarnessError::InvalidGrid(e.to_string()))?;
        }
        Ok(())
    }

    /// Substream for one rep (keyed by position in the grid, never by schedule).
    pub fn rep_key(&self, phi_idx: usize, n_idx: usize, rep: usize) -> StreamKey {
        let rep = if self.share_substreams { 0 } else { rep };
        StreamKey::new(self.seed).child("grid").index(phi_idx as u64).index(n_idx as u64).index(rep as u64)
    }

    /// All `(phi index, n index, rep)` triples in canonical order.
    pub fn tasks(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.phis.len() * self.sizes.len() * self.reps);
        for p in 0..self.phis.len() {
            for n in 0..self.sizes.len() {
                for r in 0..self.reps {
                    out.push((p, n, r));
                }
            }
        }
        out
    }
}

/// One estimator's result in one rep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RepEstimate {
    Ok { tau_hat: f64, se: f64, covers: bool },
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub phi_idx: usize,
    pub n_idx: usize,
    pub rep: usize,
    /// Parallel to the grid's estimator list.
    pub estimates: Vec<RepEstimate>,
}

/// Generates one rep's data and runs every estimator on it.
pub fn run_rep(grid: &ExperimentGrid, phi_idx: usize, n_idx: usize, rep: usize) -> RepOutcome {
    let key = grid.rep_key(phi_idx, n_idx, rep);
    let spec = grid.spec.clone().with_phi(grid.phis[phi_idx]);
    let tau = spec.true_tau();
    let n = grid.sizes[n_idx];
    let estimates = match dgp::sample_with_key(&spec, n, grid.model, key.child("data")) {
        Err(e) => vec![RepEstimate::Failed(e.to_string()); grid.estimators.len()],
        Ok(sample) => {
            let opts = EstimateOptions { alpha: grid.alpha, seed: key.child("folds").raw(), ..grid.options };
            run_estimators(&sample.dataset, &grid.estimators, grid.target, &opts)
                .into_iter()
                .map(|r| match r {
                    Ok(rep) => RepEstimate::Ok { tau_hat: rep.tau_hat, se: rep.se, covers: rep.covers(tau) },
                    Err(e) => RepEstimate::Failed(e.to_string()),
                })
                .collect()
        }
    };
    RepOutcome { phi_idx, n_idx, rep, estimates }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub estimator: EstimatorKind,
    pub phi: f64,
    pub n: usize,
    pub true_tau: f64,
    pub bias: f64,
    pub abs_bias: f64,
    /// Spread of the estimates around their mean, divided by the success count.
    pub variance: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub mean_se: f64,
    /// Monte Carlo standard error of `bias`.
    pub bias_se: f64,
    pub reps: usize,
    pub successes: usize,
    pub failures: usize,
    /// First failure message, if any.
    pub first_failure: Option<String>,
}

impl CellResult {
    pub fn from_estimates(estimator: EstimatorKind, phi: f64, n: usize, true_tau: f64, estimates: &[&RepEstimate]) -> Self {
        let mut taus = Vec::new();
        let mut ses = Vec::new();
        let mut covered = 0usize;
        let mut first_failure = None;
        for e in estimates {
            match e {
                RepEstimate::Ok { tau_hat, se, covers } => {
                    taus.push(*tau_hat);
                    ses.push(*se);
                    covered += usize::from(*covers);
                }
                RepEstimate::Failed(msg) => {
                    if first_failure.is_none() {
                        first_failure = Some(msg.clone());
                    }
                }
            }
        }
        let m = taus.len();
        let (bias, variance, rmse, coverage, mean_se, bias_se) = if m == 0 {
            (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN)
        } else {
            let mean = crate::math::mean(&taus);
            let bias = mean - true_tau;
            let dev: Vec<f64> = taus.iter().map(|t| (t - mean) * (t - mean)).collect();
            let variance = crate::math::mean(&dev);
            let sq: Vec<f64> = taus.iter().map(|t| (t - true_tau) * (t - true_tau)).collect();
            let rmse = libm::sqrt(crate::math::mean(&sq));
            (bias, variance, rmse, covered as f64 / m as f64, crate::math::mean(&ses), libm::sqrt(variance / m as f64))
        };
        CellResult {
            estimator,
            phi,
            n,
            true_tau,
            bias,
            abs_bias: bias.abs(),
            variance,
            rmse,
            coverage,
            mean_se,
            bias_se,
            reps: estimates.len(),
            successes: m,
            failures: estimates.len() - m,
            first_failure,
        }
    }
}

/// Aggregates rep outcomes (in any order) into cells ordered by `(phi, n, estimator)`.
pub fn aggregate(grid: &ExperimentGrid, outcomes: &[RepOutcome]) -> Vec<CellResult> {
    let mut cells = Vec::new();
    for (p, &phi) in grid.phis.iter().enumerate() {
        let tau = grid.spec.clone().with_phi(phi).true_tau();
        for (ni, &n) in grid.sizes.iter().enumerate() {
            let mut reps: Vec<&RepOutcome> = outcomes.iter().filter(|o| o.phi_idx == p && o.n_idx == ni).collect();
            reps.sort_by_key(|o| o.rep);
            for (ei, &kind) in grid.estimators.iter().enumerate() {
                let est: Vec<&RepEstimate> = reps.iter().map(|o| &o.estimates[ei]).collect();
                cells.push(CellResult::from_estimates(kind, phi, n, tau, &est));
            }
        }
    }
    cells
}

/// Runs the whole grid on the current thread.
pub fn run_grid(grid: &ExperimentGrid) -> Result<Vec<CellResult>, HarnessError> {
    grid.validate()?;
    let outcomes: Vec<RepOutcome> = grid.tasks().into_iter().map(|(p, n, r)| run_rep(grid, p, n, r)).collect();
    Ok(aggregate(grid, &outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> ExperimentGrid {
        ExperimentGrid {
            phis: vec![0.0],
            sizes: vec![400],
            reps: 3,
            estimators: vec![EstimatorKind::DiffMeans, EstimatorKind::DmlLut],
            ..ExperimentGrid::default()
        }
    }

    #[test]
    fn shared_substreams_have_zero_variance() {
        let grid = ExperimentGrid { reps: 2, share_substreams: true, ..small_grid() };
        for c in run_grid(&grid).unwrap() {
            assert_eq!(c.variance, 0.0);
            assert!((c.rmse - c.abs_bias).abs() <= 1e-12 * c.rmse.max(1.0));
        }
    }

    #[test]
    fn cells_account_for_every_rep() {
        let grid = small_grid();
        let cells = run_grid(&grid).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            assert_eq!(c.successes + c.failures, c.reps);
            assert!((c.rmse * c.rmse - (c.bias * c.bias + c.variance)).abs() <= 1e-8 * (c.rmse * c.rmse).max(1e-300));
            assert!((0.0..=1.0).contains(&c.coverage));
        }
    }

    #[test]
    fn tiny_samples_are_counted_as_failures() {
        let grid = ExperimentGrid { sizes: vec![6], estimators: vec![EstimatorKind::DmlLut], ..small_grid() };
        let cells = run_grid(&grid).unwrap();
        assert_eq!(cells[0].failures, 3);
        assert!(cells[0].first_failure.is_some());
    }

    #[test]
    fn invalid_grids() {
        assert!(ExperimentGrid { reps: 1, ..small_grid() }.validate().is_err());
        let g = ExperimentGrid { estimators: vec![EstimatorKind::DmlSurrogacy], ..small_grid() };
        assert!(g.validate().is_err());
    }
}
