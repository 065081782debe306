//! Random k-fold plans and out-of-fold nuisance evaluation.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ModelKind};
use crate::nuisance::{LearnerConfig, NuisanceError, NuisanceSet, NuisanceSource, NuisanceValues};
use crate::rng::StreamKey;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CrossfitError {
    #[error("{n} units cannot be split into {k} folds (need at least {})", 2 * k)]
    TooFewUnits { n: usize, k: usize },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("fold plan covers {plan} units but the dataset has {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: NuisanceError,
    },
    #[error("nuisance source is for the {expected} model but the dataset is {found}")]
    ModelMismatch { expected: ModelKind, found: ModelKind },
}

/// Assignment of units to `k` folds. Fold sizes differ by at most one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    /// Units evaluated in fold `l`.
    pub fn fold(&self, l: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == l).collect()
    }

    /// Training units for fold `l` (all other folds).
    pub fn complement(&self, l: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != l).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Shuffles the labels `i mod k` with the stream keyed by `(seed, "folds")`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan, CrossfitError> {
    if k < 2 {
        return Err(CrossfitError::InvalidFoldCount(k));
    }
    if n < 2 * k {
        return Err(CrossfitError::TooFewUnits { n, k });
    }
    let mut assignments: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut rng = StreamKey::new(seed).child("folds").rng();
    assignments.shuffle(&mut rng);
    Ok(FoldPlan { k, assignments, seed })
}

/// How `pi` enters the moments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiMode {
    /// Share of `g = 1` in each fold's training complement.
    #[default]
    PerFold,
    /// Share of `g = 1` in the whole sample.
    Global,
}

/// Out-of-fold nuisance values for every unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossfitEvaluations {
    pub plan: FoldPlan,
    pub values: Vec<NuisanceValues>,
    /// `pi` used for each unit's moment.
    pub pi: Vec<f64>,
    /// Training-complement `pi` for each fold.
    pub fold_pi: Vec<f64>,
    /// Units at which at least one propensity was clipped.
    pub clipped: usize,
}

impl CrossfitEvaluations {
    pub fn k(&self) -> usize {
        self.plan.k
    }
}

fn check_plan(ds: &Dataset, plan: &FoldPlan) -> Result<(), CrossfitError> {
    if plan.n() != ds.n() {
        return Err(CrossfitError::PlanMismatch { plan: plan.n(), data: ds.n() });
    }
    Ok(())
}

/// Fits the nuisance set for fold `l` on its training complement.
pub fn fit_fold(ds: &Dataset, plan: &FoldPlan, l: usize, cfg: &LearnerConfig) -> Result<NuisanceSet, CrossfitError> {
    NuisanceSet::fit(ds, &plan.complement(l), cfg).map_err(|source| CrossfitError::Fold { fold: l, source })
}

/// Assembles out-of-fold evaluations from one nuisance source per fold.
pub fn assemble<S: NuisanceSource>(
    ds: &Dataset,
    plan: &FoldPlan,
    fold_sources: &[S],
    pi_mode: PiMode,
) -> Result<CrossfitEvaluations, CrossfitError> {
    check_plan(ds, plan)?;
    assert_eq!(fold_sources.len(), plan.k, "one nuisance source per fold");
    for s in fold_sources {
        if s.model() != ds.model() {
            return Err(CrossfitError::ModelMismatch { expected: s.model(), found: ds.model() });
        }
    }
    let fold_pi: Vec<f64> = fold_sources.iter().map(|s| s.pi()).collect();
    let global_pi = ds.group_share();
    let mut values = Vec::with_capacity(ds.n());
    let mut pi = Vec::with_capacity(ds.n());
    let mut clipped = 0;
    for i in 0..ds.n() {
        let l = plan.assignments[i];
        let (v, c) = fold_sources[l].evaluate_counting(&ds.obs(i));
        values.push(v);
        clipped += usize::from(c);
        pi.push(match pi_mode {
            PiMode::PerFold => fold_pi[l],
            PiMode::Global => global_pi,
        });
    }
    Ok(CrossfitEvaluations { plan: plan.clone(), values, pi, fold_pi, clipped })
}

/// For each fold, fits nuisances on the complement and evaluates them on the fold.
pub fn crossfit_nuisances(
    ds: &Dataset,
    plan: &FoldPlan,
    cfg: &LearnerConfig,
    pi_mode: PiMode,
) -> Result<CrossfitEvaluations, CrossfitError> {
    check_plan(ds, plan)?;
    let sets = (0..plan.k).map(|l| fit_fold(ds, plan, l, cfg)).collect::<Result<Vec<_>, _>>()?;
    assemble(ds, plan, &sets, pi_mode)
}

/// Evaluates a single fixed source (oracle or corrupted nuisances) on every unit,
/// keeping the fold structure for the moment solver.
pub fn evaluate_source(
    ds: &Dataset,
    plan: &FoldPlan,
    source: &dyn NuisanceSource,
    pi_mode: PiMode,
) -> Result<CrossfitEvaluations, CrossfitError> {
    struct Fixed<'a>(&'a dyn NuisanceSource);
    impl NuisanceSource for Fixed<'_> {
        fn model(&self) -> ModelKind {
            self.0.model()
        }
        fn pi(&self) -> f64 {
            self.0.pi()
        }
        fn evaluate(&self, obs: &crate::dataset::Observation<'_>) -> NuisanceValues {
            self.0.evaluate(obs)
        }
        fn evaluate_counting(&self, obs: &crate::dataset::Observation<'_>) -> (NuisanceValues, bool) {
            self.0.evaluate_counting(obs)
        }
    }
    let sources: Vec<Fixed<'_>> = (0..plan.k).map(|_| Fixed(source)).collect();
    assemble(ds, plan, &sources, pi_mode)
}
