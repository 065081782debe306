use crate::crossfit::CrossfitError;
use crate::dataset::DatasetError;
use crate::dgp::DgpError;
use crate::efficiency::EfficiencyError;
use crate::estimators::EstimatorError;
use crate::harness::HarnessError;
use crate::learners::LearnerError;
use crate::nuisance::NuisanceError;

/// Any error raised by this crate.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Crossfit(#[from] CrossfitError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}
