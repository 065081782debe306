//! Estimation of long-term average treatment effects by combining a short-term
//! randomized experiment with a long-term observational sample.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO. It provides:
//!
//! - [`dataset`]: the two-sample observation model and its observability rules,
//! - [`learners`]: polynomial sieve least squares, ridge, least-squares probability
//!   fits and Newton logistic regression,
//! - [`nuisance`]: model-specific nuisance sets, including nested two-stage
//!   regressions and the Bayes-rule composition of the latent treatment propensity,
//! - [`crossfit`]: random fold plans and out-of-fold nuisance evaluation,
//! - [`estimators`]: efficient influence functions, the cross-fitted DML estimator,
//!   non-orthogonal moment estimators and the naive difference in means,
//! - [`dgp`]: an analytic linear-Gaussian generator with exact oracle nuisances,
//! - [`efficiency`]: Monte Carlo efficiency bounds and orthogonality audits,
//! - [`harness`]: the Monte Carlo experiment grid (bias, RMSE, coverage).
//!
//! Two identification models are supported. Under the latent unconfounded treatment
//! model treatment is recorded in both samples; under statistical surrogacy it is
//! recorded only in the experiment.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod crossfit;
pub mod dataset;
pub mod dgp;
pub mod efficiency;
mod error;
pub mod estimators;
pub mod harness;
pub mod learners;
pub mod linalg;
pub mod math;
pub mod nuisance;
pub mod rng;

pub use error::Error;

pub use crossfit::{crossfit_nuisances, make_folds, CrossfitEvaluations, FoldPlan, PiMode};
pub use dataset::{Arm, Dataset, ModelKind, Observation, Target};
pub use dgp::{DgpSpec, OracleNuisances};
pub use estimators::{EstimateReport, EstimatorKind};
pub use nuisance::{LearnerConfig, NuisanceSet, NuisanceSource, NuisanceValues};
