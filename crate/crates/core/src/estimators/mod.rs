//! Estimators of the violation/DID vector and its covariance from
//! long-format data.

mod bootstrap;
pub(crate) mod dataset;
mod means;
mod twfe;

pub use bootstrap::{
    bootstrap_draws, estimate_covariance_bootstrap, BootstrapConfig, BootstrapDraws, PointEstimator, ResampleLevel,
    MIN_REPLICATIONS, RECOMMENDED_REPLICATIONS,
};
pub use dataset::{Dataset, Design, Observation, MIN_CELL_ROWS};
pub use means::{estimate_theta_sample_means, plugin_covariance};
pub use twfe::estimate_theta_twfe;

use crate::domain::ThetaEstimate;
use crate::error::Result;

/// Point estimate from the chosen estimator, without covariance for the
/// fixed-effects path and with the plug-in covariance for cross-sectional
/// cell means.
pub fn estimate_theta(data: &Dataset, estimator: PointEstimator) -> Result<ThetaEstimate> {
    match estimator {
        PointEstimator::Means => estimate_theta_sample_means(data),
        PointEstimator::Twfe => estimate_theta_twfe(data),
    }
}
