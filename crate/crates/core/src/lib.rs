//! Conditional extrapolation for difference-in-differences.
//!
//! Pre-treatment parallel-trends violations are summarised by a severity
//! measure. A pretest checks whether estimated pre-treatment severity stays
//! below a user threshold `M`; when it does, the post-treatment violations
//! are assumed no more severe than the pre-treatment ones and the confidence
//! interval for the ATT widens by a bias bound plus a Monte-Carlo critical
//! value. The resulting interval is valid conditional on passing the pretest.
//!
//! ```
//! use didguard::{kappa, NormOrder};
//! assert_eq!(kappa(3, NormOrder::ONE), 3.0);
//! assert_eq!(kappa(3, NormOrder::INFINITY), 2.0);
//! ```

pub mod cli;
pub mod domain;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod pretest;
pub mod rng;
pub mod severity;
pub mod sim;

pub use domain::{
    iterative_to_overall, overall_to_iterative, transform_theta_to_overall, NormOrder, SeverityParams, ThetaEstimate,
    TimeLayout, ViolationMode,
};
pub use error::{Error, Result};
pub use estimators::{
    estimate_covariance_bootstrap, estimate_theta, estimate_theta_sample_means, estimate_theta_twfe, BootstrapConfig,
    Dataset, Design, Observation, PointEstimator, ResampleLevel,
};
pub use inference::{confidence_interval, critical_value, psi_statistic, InferenceParams, IntervalReport};
pub use pretest::{run_pretest, PretestResult};
pub use severity::{bias_bound, kappa, kappa_lin, severity, worst_case_post_violations, SeverityReport};
