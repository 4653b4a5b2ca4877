//! Monte-Carlo experiments over a grid of design points.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{build_population, sample_dataset, DgpSpec, Population};
use crate::domain::{NormOrder, SeverityParams, TimeLayout, ViolationMode};
use crate::error::{Error, Result};
use crate::estimators::estimate_theta_sample_means;
use crate::inference::{confidence_interval, InferenceParams, DEFAULT_MC_DRAWS};
use crate::pretest::PretestResult;
use crate::rng::derive_seed;
use crate::severity::severity;

pub const DEFAULT_REPLICATIONS: usize = 5000;
/// Replication counts below this only make sense as smoke runs.
pub const RECOMMENDED_MIN_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RejectionCurve,
    ConditionalCoverage,
    ValidReporting,
    ExpectedWidth,
    /// Width as a function of the analysis `p` on shared samples: every
    /// grid point analyses the same draws, generated under the base `p`.
    WidthVsP,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RejectionCurve => "rejection_curve",
            ExperimentKind::ConditionalCoverage => "conditional_coverage",
            ExperimentKind::ValidReporting => "valid_reporting",
            ExperimentKind::ExpectedWidth => "expected_width",
            ExperimentKind::WidthVsP => "width_vs_p",
        }
    }

    pub fn default_x_axis(self) -> XAxis {
        match self {
            ExperimentKind::RejectionCurve | ExperimentKind::ConditionalCoverage => XAxis::SPreMinusM,
            ExperimentKind::ValidReporting => XAxis::NPerCell,
            ExperimentKind::ExpectedWidth => XAxis::TPre,
            ExperimentKind::WidthVsP => XAxis::P,
        }
    }

    fn needs_interval(self) -> bool {
        self != ExperimentKind::RejectionCurve
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let all = [
            ExperimentKind::RejectionCurve,
            ExperimentKind::ConditionalCoverage,
            ExperimentKind::ValidReporting,
            ExperimentKind::ExpectedWidth,
            ExperimentKind::WidthVsP,
        ];
        all.into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown experiment kind '{s}'")))
    }
}

/// Quantity reported in the `x_value` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XAxis {
    SPreTarget,
    SPreMinusM,
    TPre,
    TPost,
    P,
    NPerCell,
}

impl XAxis {
    pub fn name(self) -> &'static str {
        match self {
            XAxis::SPreTarget => "s_pre_target",
            XAxis::SPreMinusM => "s_pre_minus_m",
            XAxis::TPre => "t_pre",
            XAxis::TPost => "t_post",
            XAxis::P => "p",
            XAxis::NPerCell => "n_per_cell",
        }
    }

    fn value(self, spec: &DgpSpec) -> String {
        match self {
            XAxis::SPreTarget => spec.s_pre_target.to_string(),
            XAxis::SPreMinusM => round_offset(spec.s_pre_target - spec.threshold_m).to_string(),
            XAxis::TPre => spec.layout.pre_length().to_string(),
            XAxis::TPost => spec.layout.post_length().to_string(),
            XAxis::P => spec.p.to_string(),
            XAxis::NPerCell => spec.n_per_cell.to_string(),
        }
    }
}

/// Strips floating-point residue such as `0.30000000000000004`.
fn round_offset(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Per-scenario changes to the base design. `s_pre_minus_m` sets the
/// pre-treatment severity relative to the (possibly overridden) threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverride {
    pub t_pre: Option<u32>,
    pub t_post: Option<u32>,
    pub threshold_m: Option<f64>,
    pub s_pre_target: Option<f64>,
    pub s_pre_minus_m: Option<f64>,
    pub p: Option<NormOrder>,
    pub n_per_cell: Option<usize>,
    pub trend_alpha: Option<f64>,
    pub ar_rho: Option<f64>,
    pub effect_beta: Option<f64>,
    pub sigma_treated: Option<f64>,
    pub sigma_control: Option<f64>,
}

impl ScenarioOverride {
    pub fn apply(&self, base: &DgpSpec) -> Result<DgpSpec> {
        let mut s = base.clone();
        if self.t_pre.is_some() || self.t_post.is_some() {
            let pre = self.t_pre.unwrap_or(base.layout.pre_length() as u32);
            let post = self.t_post.unwrap_or(base.layout.post_length() as u32);
            s.layout = TimeLayout::from_lengths(pre, post)?;
        }
        if let Some(m) = self.threshold_m {
            s.threshold_m = m;
        }
        match (self.s_pre_target, self.s_pre_minus_m) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidParameter(
                    "a scenario cannot set both s_pre_target and s_pre_minus_m".into(),
                ))
            }
            (Some(v), None) => s.s_pre_target = v,
            (None, Some(offset)) => s.s_pre_target = round_offset(s.threshold_m + offset),
            (None, None) => {}
        }
        if let Some(p) = self.p {
            s.p = p;
        }
        if let Some(n) = self.n_per_cell {
            s.n_per_cell = n;
        }
        let reals = [
            (self.trend_alpha, &mut s.trend_alpha),
            (self.ar_rho, &mut s.ar_rho),
            (self.effect_beta, &mut s.effect_beta),
            (self.sigma_treated, &mut s.sigma_treated),
            (self.sigma_control, &mut s.sigma_control),
        ];
        for (v, slot) in reals {
            if let Some(v) = v {
                *slot = v;
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub base: DgpSpec,
    pub grid: Vec<ScenarioOverride>,
    pub replications: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub mc_draws: usize,
    pub x_axis: XAxis,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, base: DgpSpec, grid: Vec<ScenarioOverride>) -> Self {
        ExperimentSpec {
            name: kind.name().to_string(),
            kind,
            base,
            grid,
            replications: DEFAULT_REPLICATIONS,
            alpha: 0.05,
            master_seed: 0,
            mc_draws: DEFAULT_MC_DRAWS,
            x_axis: kind.default_x_axis(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidParameter("experiment grid is empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        self.base.validate()
    }

    /// Resolved design of every grid point, in grid order.
    pub fn scenarios(&self) -> Result<Vec<DgpSpec>> {
        self.grid.iter().map(|g| g.apply(&self.base)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RejectionRate,
    ConditionalCoverage,
    ConventionalConditionalCoverage,
    ValidReporting,
    ExpectedWidth,
    MeanPointEstimate,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RejectionRate => "rejection_rate",
            Metric::ConditionalCoverage => "conditional_coverage",
            Metric::ConventionalConditionalCoverage => "conventional_conditional_coverage",
            Metric::ValidReporting => "valid_reporting",
            Metric::ExpectedWidth => "expected_width",
            Metric::MeanPointEstimate => "mean_point_estimate",
        }
    }
}

/// One row of the tidy output. `value` and `mc_se` are `None` when the
/// quantity is undefined (for example no replicate passed the pretest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub scenario_id: usize,
    pub x_name: String,
    pub x_value: String,
    pub metric: Metric,
    pub value: Option<f64>,
    pub mc_se: Option<f64>,
    pub n_conditioning: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub scenarios: Vec<DgpSpec>,
    pub populations: Vec<Population>,
    pub rows: Vec<MetricRow>,
}

impl ExperimentResult {
    pub fn value(&self, scenario_id: usize, metric: Metric) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.scenario_id == scenario_id && r.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidData(format!("writing CSV: {e}"));
        w.write_record([
            "experiment",
            "scenario_id",
            "x_name",
            "x_value",
            "metric",
            "value",
            "mc_se",
            "n_conditioning",
        ])
        .map_err(io)?;
        let fmt = |v: Option<f64>| {
            v.filter(|x| x.is_finite())
                .map_or_else(|| "NA".to_string(), |x| x.to_string())
        };
        for r in &self.rows {
            w.write_record([
                r.experiment.clone(),
                r.scenario_id.to_string(),
                r.x_name.clone(),
                r.x_value.clone(),
                r.metric.name().to_string(),
                fmt(r.value),
                fmt(r.mc_se),
                r.n_conditioning.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidData(format!("writing CSV: {e}")))
    }

    /// Companion table with the full design of each scenario.
    pub fn write_scenarios_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidData(format!("writing CSV: {e}"));
        w.write_record([
            "scenario_id",
            "t_pre",
            "t_post",
            "s_pre_target",
            "s_post",
            "threshold_m",
            "p",
            "n_per_cell",
            "true_tau_att",
            "true_tau_dd",
        ])
        .map_err(io)?;
        for (i, (s, pop)) in self.scenarios.iter().zip(&self.populations).enumerate() {
            w.write_record([
                i.to_string(),
                s.layout.pre_length().to_string(),
                s.layout.post_length().to_string(),
                s.s_pre_target.to_string(),
                s.s_post().to_string(),
                s.threshold_m.to_string(),
                s.p.to_string(),
                s.n_per_cell.to_string(),
                pop.true_tau_att.to_string(),
                pop.true_tau_dd.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::InvalidData(format!("writing CSV: {e}")))
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    phi: u8,
    point: f64,
    covered: bool,
    conventional_covered: bool,
    width: f64,
}

struct Replicate<'a> {
    kind: ExperimentKind,
    analysis: &'a DgpSpec,
    sampling: &'a DgpSpec,
    population: &'a Population,
    alpha: f64,
    mc_draws: usize,
}

impl Replicate<'_> {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let data = sample_dataset(self.population, self.sampling, derive_seed(seed, &[0]))?;
        let est = estimate_theta_sample_means(&data)?;
        let sev = SeverityParams::new(self.analysis.p, self.analysis.threshold_m, ViolationMode::Iterative)?;
        let att = self.population.true_tau_att;
        if !self.kind.needs_interval() {
            let s_pre = severity(est.pre_block(), sev.p)?;
            let pretest = PretestResult::from_severity(s_pre, sev.threshold_m, sev.mode);
            let point = est.post_block().iter().sum::<f64>() / est.post_block().len() as f64;
            return Ok(Outcome {
                phi: pretest.phi,
                point,
                covered: false,
                conventional_covered: false,
                width: f64::NAN,
            });
        }
        let mut params = InferenceParams::new(sev);
        params.alpha = self.alpha;
        params.mc_draws = self.mc_draws;
        params.seed = derive_seed(seed, &[1]);
        let report = confidence_interval(&est, &params)?;
        Ok(Outcome {
            phi: report.pretest.phi,
            point: report.point,
            covered: report.contains(att),
            conventional_covered: report.conventional_contains(att),
            width: 2.0 * report.half_width,
        })
    }
}

/// Mean and Monte-Carlo standard error of a binary indicator.
fn proportion(hits: usize, n: usize) -> (Option<f64>, Option<f64>) {
    if n == 0 {
        return (None, None);
    }
    let p = hits as f64 / n as f64;
    (Some(p), Some((p * (1.0 - p) / n as f64).sqrt()))
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

fn summarize(kind: ExperimentKind, outcomes: &[Outcome]) -> Vec<(Metric, Option<f64>, Option<f64>, usize)> {
    let r = outcomes.len();
    let passed: Vec<&Outcome> = outcomes.iter().filter(|o| o.phi == 0).collect();
    let n0 = passed.len();
    let rejected = r - n0;
    let points: Vec<f64> = outcomes.iter().map(|o| o.point).collect();

    let mut rows = Vec::new();
    let (v, se) = proportion(rejected, r);
    rows.push((Metric::RejectionRate, v, se, r));
    if kind.needs_interval() {
        let (v, se) = proportion(passed.iter().filter(|o| o.covered).count(), n0);
        rows.push((Metric::ConditionalCoverage, v, se, n0));
        let (v, se) = proportion(passed.iter().filter(|o| o.conventional_covered).count(), n0);
        rows.push((Metric::ConventionalConditionalCoverage, v, se, n0));
        let (v, se) = proportion(passed.iter().filter(|o| o.covered).count(), r);
        rows.push((Metric::ValidReporting, v, se, r));
        let widths: Vec<f64> = outcomes.iter().map(|o| o.width).collect();
        let (v, se) = mean_se(&widths);
        rows.push((Metric::ExpectedWidth, v, se, r));
    }
    let (v, se) = mean_se(&points);
    rows.push((Metric::MeanPointEstimate, v, se, r));
    rows
}

/// Runs every replicate of every grid point.
///
/// Replicate `i` of grid point `g` is seeded from `(master_seed, g, i)`;
/// for width-vs-p experiments the grid index is dropped so every `p`
/// analyses the same samples. Work is spread over the current rayon pool
/// and the result does not depend on its size.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    if spec.replications < RECOMMENDED_MIN_REPLICATIONS {
        log::warn!(
            "{} replications per scenario; results are a smoke run only (recommended >= {RECOMMENDED_MIN_REPLICATIONS})",
            spec.replications
        );
    }
    let scenarios = spec.scenarios()?;
    let sampling: Vec<DgpSpec> = scenarios
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if spec.kind == ExperimentKind::WidthVsP {
                s.p = spec.base.p;
            }
            s
        })
        .collect();
    let populations = sampling.iter().map(build_population).collect::<Result<Vec<_>>>()?;

    let r = spec.replications;
    let tasks: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|g| (0..r).map(move |i| (g, i))).collect();
    let outcomes: Vec<Outcome> = tasks
        .par_iter()
        .map(|&(g, i)| {
            let grid_part = if spec.kind == ExperimentKind::WidthVsP {
                0
            } else {
                g as u64
            };
            let seed = derive_seed(spec.master_seed, &[grid_part, i as u64]);
            Replicate {
                kind: spec.kind,
                analysis: &scenarios[g],
                sampling: &sampling[g],
                population: &populations[g],
                alpha: spec.alpha,
                mc_draws: spec.mc_draws,
            }
            .run(seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (g, (scenario, chunk)) in scenarios.iter().zip(outcomes.chunks(r)).enumerate() {
        for (metric, value, mc_se, n_conditioning) in summarize(spec.kind, chunk) {
            rows.push(MetricRow {
                experiment: spec.name.clone(),
                scenario_id: g,
                x_name: spec.x_axis.name().to_string(),
                x_value: spec.x_axis.value(scenario),
                metric,
                value,
                mc_se,
                n_conditioning,
            });
        }
    }
    Ok(ExperimentResult {
        spec: spec.clone(),
        scenarios,
        populations,
        rows,
    })
}
