//! Interval width as the severity order p varies, on a single sample with
//! ten pre-treatment periods.

use didguard::sim::{run_experiment, DgpSpec, ExperimentKind, ExperimentSpec, Metric, ScenarioOverride};
use didguard::{NormOrder, TimeLayout};

fn main() -> didguard::Result<()> {
    let base = DgpSpec::new(TimeLayout::from_lengths(10, 4)?, 0.1, 100.0, NormOrder::TWO, 100);
    let ps: Vec<f64> = (0..=28).map(|i| 1.0 + 0.25 * f64::from(i)).collect();
    let grid = ps
        .iter()
        .map(|&p| ScenarioOverride {
            p: Some(NormOrder::new(p).expect("p >= 1")),
            ..Default::default()
        })
        .collect();
    let mut spec = ExperimentSpec::new(ExperimentKind::WidthVsP, base, grid);
    spec.replications = 1;
    spec.master_seed = 20240102;

    let result = run_experiment(&spec)?;
    let mut best = (f64::INFINITY, 0.0);
    for (id, p) in ps.iter().enumerate() {
        let w = result
            .value(id, Metric::ExpectedWidth)
            .and_then(|r| r.value)
            .unwrap_or(f64::NAN);
        println!("p = {p:>5.2}  width {w:.4}");
        if w < best.0 {
            best = (w, *p);
        }
    }
    println!("narrowest interval at p = {}", best.1);
    Ok(())
}
