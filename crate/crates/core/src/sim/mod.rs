//! Monte-Carlo study of the pretest and the conditional interval on a
//! synthetic repeated cross-section population with known ATT.

mod config;
mod dgp;
mod experiment;

pub use config::{load_experiment_config, parse_experiment_config};
pub use dgp::{build_population, sample_dataset, DgpSpec, Population};
pub use experiment::{
    run_experiment, ExperimentKind, ExperimentResult, ExperimentSpec, Metric, MetricRow, ScenarioOverride, XAxis,
    DEFAULT_REPLICATIONS, RECOMMENDED_MIN_REPLICATIONS,
};
