//! TOML experiment files with `[experiment]`, `[dgp]` and `[grid]`
//! sections. Every `[grid]` key takes an array; the scenarios are the
//! cartesian product of all arrays, with earlier keys varying slowest.
//! Unknown keys are rejected.
//!
//! ```toml
//! [experiment]
//! kind = "conditional_coverage"
//! replications = 1000
//!
//! [dgp]
//! t_pre = 3
//! t_post = 1
//! threshold_m = 2.0
//! n_per_cell = 100
//!
//! [grid]
//! s_pre_minus_m = [-0.5, 0.5]
//! ```

use std::path::Path;

use serde::Deserialize;

use super::dgp::DgpSpec;
use super::experiment::{ExperimentKind, ExperimentSpec, ScenarioOverride, XAxis};
use crate::domain::{NormOrder, TimeLayout};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    experiment: ExperimentSection,
    dgp: DgpSection,
    #[serde(default)]
    grid: GridSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    kind: ExperimentKind,
    name: Option<String>,
    replications: Option<usize>,
    alpha: Option<f64>,
    master_seed: Option<u64>,
    mc_draws: Option<usize>,
    x_axis: Option<XAxis>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DgpSection {
    t_pre: u32,
    t_post: u32,
    threshold_m: f64,
    n_per_cell: usize,
    #[serde(default)]
    s_pre_target: f64,
    p: Option<NormOrder>,
    trend_alpha: Option<f64>,
    ar_rho: Option<f64>,
    effect_beta: Option<f64>,
    sigma_treated: Option<f64>,
    sigma_control: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    t_pre: Option<Vec<u32>>,
    t_post: Option<Vec<u32>>,
    threshold_m: Option<Vec<f64>>,
    s_pre_target: Option<Vec<f64>>,
    s_pre_minus_m: Option<Vec<f64>>,
    p: Option<Vec<NormOrder>>,
    n_per_cell: Option<Vec<usize>>,
    trend_alpha: Option<Vec<f64>>,
    ar_rho: Option<Vec<f64>>,
    effect_beta: Option<Vec<f64>>,
    sigma_treated: Option<Vec<f64>>,
    sigma_control: Option<Vec<f64>>,
}

fn expand<T: Clone>(
    scenarios: Vec<ScenarioOverride>,
    key: &str,
    values: &Option<Vec<T>>,
    set: impl Fn(&mut ScenarioOverride, T),
) -> Result<Vec<ScenarioOverride>> {
    let Some(values) = values else {
        return Ok(scenarios);
    };
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("grid key '{key}' has an empty array")));
    }
    Ok(scenarios
        .iter()
        .flat_map(|s| {
            values.iter().map(|v| {
                let mut s = s.clone();
                set(&mut s, v.clone());
                s
            })
        })
        .collect())
}

impl GridSection {
    fn scenarios(&self) -> Result<Vec<ScenarioOverride>> {
        let mut g = vec![ScenarioOverride::default()];
        g = expand(g, "t_pre", &self.t_pre, |s, v| s.t_pre = Some(v))?;
        g = expand(g, "t_post", &self.t_post, |s, v| s.t_post = Some(v))?;
        g = expand(g, "threshold_m", &self.threshold_m, |s, v| s.threshold_m = Some(v))?;
        g = expand(g, "s_pre_target", &self.s_pre_target, |s, v| s.s_pre_target = Some(v))?;
        g = expand(g, "s_pre_minus_m", &self.s_pre_minus_m, |s, v| {
            s.s_pre_minus_m = Some(v)
        })?;
        g = expand(g, "p", &self.p, |s, v| s.p = Some(v))?;
        g = expand(g, "n_per_cell", &self.n_per_cell, |s, v| s.n_per_cell = Some(v))?;
        g = expand(g, "trend_alpha", &self.trend_alpha, |s, v| s.trend_alpha = Some(v))?;
        g = expand(g, "ar_rho", &self.ar_rho, |s, v| s.ar_rho = Some(v))?;
        g = expand(g, "effect_beta", &self.effect_beta, |s, v| s.effect_beta = Some(v))?;
        g = expand(g, "sigma_treated", &self.sigma_treated, |s, v| {
            s.sigma_treated = Some(v)
        })?;
        g = expand(g, "sigma_control", &self.sigma_control, |s, v| {
            s.sigma_control = Some(v)
        })?;
        Ok(g)
    }
}

pub fn parse_experiment_config(text: &str) -> Result<ExperimentSpec> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("experiment config: {e}")))?;
    let d = file.dgp;
    let mut base = DgpSpec::new(
        TimeLayout::from_lengths(d.t_pre, d.t_post)?,
        d.s_pre_target,
        d.threshold_m,
        d.p.unwrap_or(NormOrder::TWO),
        d.n_per_cell,
    );
    base.trend_alpha = d.trend_alpha.unwrap_or(base.trend_alpha);
    base.ar_rho = d.ar_rho.unwrap_or(base.ar_rho);
    base.effect_beta = d.effect_beta.unwrap_or(base.effect_beta);
    base.sigma_treated = d.sigma_treated.unwrap_or(base.sigma_treated);
    base.sigma_control = d.sigma_control.unwrap_or(base.sigma_control);

    let e = file.experiment;
    let mut spec = ExperimentSpec::new(e.kind, base, file.grid.scenarios()?);
    if let Some(name) = e.name {
        spec.name = name;
    }
    spec.replications = e.replications.unwrap_or(spec.replications);
    spec.alpha = e.alpha.unwrap_or(spec.alpha);
    spec.master_seed = e.master_seed.unwrap_or(spec.master_seed);
    spec.mc_draws = e.mc_draws.unwrap_or(spec.mc_draws);
    spec.x_axis = e.x_axis.unwrap_or(spec.x_axis);
    spec.validate()?;
    Ok(spec)
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
    parse_experiment_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
kind = "rejection_curve"
replications = 200

[dgp]
t_pre = 3
t_post = 1
threshold_m = 2.0
n_per_cell = 100

[grid]
n_per_cell = [100, 400]
s_pre_minus_m = [-0.5, 0.0, 0.5]
p = [1, 2.5, "inf"]
"#;

    #[test]
    fn grid_is_cartesian_product() {
        let spec = parse_experiment_config(MINIMAL).unwrap();
        assert_eq!(spec.grid.len(), 18);
        let first = &spec.grid[0];
        assert_eq!(first.s_pre_minus_m, Some(-0.5));
        assert_eq!(first.n_per_cell, Some(100));
        assert_eq!(first.p, Some(NormOrder::ONE));
        assert_eq!(spec.grid[1].n_per_cell, Some(400));
        assert_eq!(spec.grid[4].p, Some(NormOrder::INFINITY));
        assert_eq!(spec.grid[17].n_per_cell, Some(400));
        assert_eq!(spec.replications, 200);
        assert_eq!(spec.base.effect_beta, 2.0);
        assert_eq!(spec.x_axis, XAxis::SPreMinusM);
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            MINIMAL.replace("replications = 200", "replications = 200\nreplicates = 3"),
            MINIMAL.replace("n_per_cell = 100\n", "n_per_cell = 100\nsigma = 1.0\n"),
            MINIMAL.replace("[grid]", "[grid]\nbeta = [1.0]"),
            format!("{MINIMAL}\n[extra]\nx = 1\n"),
        ] {
            let err = parse_experiment_config(&bad).unwrap_err().to_string();
            assert!(err.contains("unknown"), "{err}");
        }
    }

    #[test]
    fn no_grid_means_one_scenario() {
        let text = MINIMAL.split("[grid]").next().unwrap();
        let spec = parse_experiment_config(text).unwrap();
        assert_eq!(spec.grid, vec![ScenarioOverride::default()]);
    }
}
