//! A reduced conditional-coverage experiment: the proposed interval keeps
//! its coverage while S_pre <= M, the conventional one does not, and both
//! fail once the extrapolation condition is false.

use didguard::sim::{run_experiment, DgpSpec, ExperimentKind, ExperimentSpec, ScenarioOverride};
use didguard::{NormOrder, TimeLayout};

fn main() -> didguard::Result<()> {
    let base = DgpSpec::new(TimeLayout::from_lengths(3, 1)?, 1.0, 2.0, NormOrder::TWO, 100);
    let grid = [-1.0, -0.5, -0.2, 0.2, 0.5]
        .into_iter()
        .map(|offset| ScenarioOverride {
            s_pre_minus_m: Some(offset),
            ..Default::default()
        })
        .collect();
    let mut spec = ExperimentSpec::new(ExperimentKind::ConditionalCoverage, base, grid);
    spec.replications = 400;
    spec.master_seed = 1;

    let result = run_experiment(&spec)?;
    result.write_csv(std::io::stdout())?;
    Ok(())
}
