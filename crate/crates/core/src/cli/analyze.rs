//! `didguard analyze`: estimate, pretest and report an interval for a
//! long-format CSV.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use super::input::{parse_number_list, read_observations};
use crate::domain::{iterative_to_overall, NormOrder, SeverityParams, ThetaEstimate, TimeLayout, ViolationMode};
use crate::error::{Error, Result};
use crate::estimators::{
    bootstrap_draws, estimate_theta, BootstrapConfig, Dataset, Design, PointEstimator, ResampleLevel,
};
use crate::inference::{confidence_interval, InferenceParams, IntervalReport, DEFAULT_MC_DRAWS};
use crate::pretest::PretestResult;
use crate::rng::derive_seed;
use crate::severity::severity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceSource {
    /// Plug-in for cross-sections with the cell-means estimator, bootstrap otherwise.
    #[default]
    Auto,
    Plugin,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DesignChoice {
    /// Panel when some unit id appears in more than one period.
    #[default]
    Auto,
    Panel,
    Rcs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Means,
    Twfe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LevelChoice {
    Cluster,
    Unit,
    Row,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeChoice {
    Iterative,
    Overall,
}

/// Numbers or a comma-separated string, for `estimand_weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightList {
    List(Vec<f64>),
    Text(String),
}

/// Analysis settings. Every field is optional here so a config file and
/// command-line flags can be layered; flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub data_path: Option<PathBuf>,
    pub t0: Option<u32>,
    pub p: Option<NormOrder>,
    pub threshold_m: Option<f64>,
    pub alpha: Option<f64>,
    pub mode: Option<ModeChoice>,
    pub cov: Option<CovarianceSource>,
    pub bootstrap_reps: Option<usize>,
    pub resample_level: Option<LevelChoice>,
    pub cluster_column: Option<String>,
    pub weight_column: Option<String>,
    pub estimand_weights: Option<WeightList>,
    pub mc_draws: Option<usize>,
    pub seed: Option<u64>,
    pub estimator: Option<EstimatorChoice>,
    pub design: Option<DesignChoice>,
    pub fail_on_reject: Option<bool>,
    pub show_invalid: Option<bool>,
    pub output: Option<OutputFormat>,
}

impl AnalysisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("analysis config: {e}")))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: AnalysisConfig) -> AnalysisConfig {
        AnalysisConfig {
            data_path: over.data_path.or(self.data_path),
            t0: over.t0.or(self.t0),
            p: over.p.or(self.p),
            threshold_m: over.threshold_m.or(self.threshold_m),
            alpha: over.alpha.or(self.alpha),
            mode: over.mode.or(self.mode),
            cov: over.cov.or(self.cov),
            bootstrap_reps: over.bootstrap_reps.or(self.bootstrap_reps),
            resample_level: over.resample_level.or(self.resample_level),
            cluster_column: over.cluster_column.or(self.cluster_column),
            weight_column: over.weight_column.or(self.weight_column),
            estimand_weights: over.estimand_weights.or(self.estimand_weights),
            mc_draws: over.mc_draws.or(self.mc_draws),
            seed: over.seed.or(self.seed),
            estimator: over.estimator.or(self.estimator),
            design: over.design.or(self.design),
            fail_on_reject: over.fail_on_reject.or(self.fail_on_reject),
            show_invalid: over.show_invalid.or(self.show_invalid),
            output: over.output.or(self.output),
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Long-format CSV with columns time, treated, outcome and optionally
    /// unit_id, cluster_id, weight.
    #[arg(long = "data")]
    pub data_path: Option<PathBuf>,
    /// TOML file with the same keys as the flags (snake_case); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First treated period.
    #[arg(long)]
    pub t0: Option<u32>,
    /// Severity order p (a number >= 1 or "inf"); defaults to 2.
    #[arg(short = 'p', long)]
    pub p: Option<NormOrder>,
    /// Acceptable pre-treatment severity M. Required.
    #[arg(short = 'M', long = "threshold-m")]
    pub threshold_m: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeChoice>,
    #[arg(long, value_enum)]
    pub cov: Option<CovarianceSource>,
    #[arg(long)]
    pub bootstrap_reps: Option<usize>,
    #[arg(long, value_enum)]
    pub resample_level: Option<LevelChoice>,
    #[arg(long)]
    pub cluster_column: Option<String>,
    #[arg(long)]
    pub weight_column: Option<String>,
    /// Comma-separated weights over the post-treatment periods.
    #[arg(long)]
    pub estimand_weights: Option<String>,
    #[arg(long)]
    pub mc_draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub estimator: Option<EstimatorChoice>,
    #[arg(long, value_enum)]
    pub design: Option<DesignChoice>,
    /// Exit with status 3 when the pretest rejects.
    #[arg(long)]
    pub fail_on_reject: bool,
    /// Print the interval even when the pretest rejects.
    #[arg(long)]
    pub show_invalid: bool,
    #[arg(long, value_enum)]
    pub output: Option<OutputFormat>,
}

impl AnalyzeArgs {
    fn as_config(&self) -> AnalysisConfig {
        AnalysisConfig {
            data_path: self.data_path.clone(),
            t0: self.t0,
            p: self.p,
            threshold_m: self.threshold_m,
            alpha: self.alpha,
            mode: self.mode,
            cov: self.cov,
            bootstrap_reps: self.bootstrap_reps,
            resample_level: self.resample_level,
            cluster_column: self.cluster_column.clone(),
            weight_column: self.weight_column.clone(),
            estimand_weights: self.estimand_weights.clone().map(WeightList::Text),
            mc_draws: self.mc_draws,
            seed: self.seed,
            estimator: self.estimator,
            design: self.design,
            fail_on_reject: self.fail_on_reject.then_some(true),
            show_invalid: self.show_invalid.then_some(true),
            output: self.output,
        }
    }

    pub fn resolve(&self) -> Result<AnalysisConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
                AnalysisConfig::from_toml(&text)?
            }
            None => AnalysisConfig::default(),
        };
        Ok(file.overlay(self.as_config()))
    }
}

/// Everything the analysis produced, as written by `--output json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub data_path: PathBuf,
    pub design: Design,
    pub estimator: PointEstimator,
    pub covariance_source: String,
    pub n_rows: usize,
    pub layout: TimeLayout,
    pub severity: SeverityParams,
    pub p_defaulted: bool,
    pub theta: ThetaEstimate,
    pub pretest: PretestResult,
    pub interval: IntervalReport,
    /// Bootstrap standard error of the estimated pre-treatment severity;
    /// a diagnostic only.
    pub s_pre_bootstrap_se: Option<f64>,
}

fn cumulative_pre(values: &[f64], m: usize, mode: ViolationMode) -> Vec<f64> {
    match mode {
        ViolationMode::Iterative => values[..m].to_vec(),
        ViolationMode::Overall => iterative_to_overall(&values[..m]).unwrap_or_default(),
    }
}

pub fn run_analysis(cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    let data_path = cfg
        .data_path
        .clone()
        .ok_or_else(|| Error::InvalidParameter("no data file given (--data or data_path)".into()))?;
    let t0 = cfg
        .t0
        .ok_or_else(|| Error::InvalidParameter("treatment time t0 is required (--t0 or t0)".into()))?;
    let threshold_m = cfg.threshold_m.ok_or_else(|| {
        Error::InvalidParameter(
            "threshold M is required (--threshold-m or threshold_m); there is no default because \
             the acceptable severity is a substantive choice"
                .into(),
        )
    })?;
    let p_defaulted = cfg.p.is_none();
    let p = cfg.p.unwrap_or(NormOrder::TWO);
    let mode = match cfg.mode {
        Some(ModeChoice::Overall) => ViolationMode::Overall,
        _ => ViolationMode::Iterative,
    };
    let severity_params = SeverityParams::new(p, threshold_m, mode)?;

    let loaded = read_observations(&data_path, cfg.cluster_column.as_deref(), cfg.weight_column.as_deref())?;
    let layout = TimeLayout::new(loaded.max_time, t0)?;
    let design = match cfg.design.unwrap_or_default() {
        DesignChoice::Auto => loaded.detect_design(),
        DesignChoice::Panel => Design::Panel,
        DesignChoice::Rcs => Design::RepeatedCrossSection,
    };
    let has_clusters = loaded.observations.iter().any(|o| o.cluster_id.is_some());
    let data = Dataset::new(loaded.observations, design, layout)?;

    let estimator = match cfg.estimator {
        Some(EstimatorChoice::Twfe) => PointEstimator::Twfe,
        _ => PointEstimator::Means,
    };
    let point = estimate_theta(&data, estimator)?;
    let use_bootstrap = match cfg.cov.unwrap_or_default() {
        CovarianceSource::Bootstrap => true,
        CovarianceSource::Plugin => {
            if design == Design::Panel {
                return Err(Error::PanelNeedsBootstrap);
            }
            if estimator != PointEstimator::Means {
                return Err(Error::Unsupported(
                    "the plug-in covariance is only available for the cell-means estimator".into(),
                ));
            }
            false
        }
        CovarianceSource::Auto => point.covariance().is_none(),
    };

    let seed = cfg.seed.unwrap_or(0);
    let (theta, s_pre_bootstrap_se, covariance_source) = if use_bootstrap {
        let level = match cfg.resample_level {
            Some(LevelChoice::Cluster) => ResampleLevel::Cluster,
            Some(LevelChoice::Unit) => ResampleLevel::Unit,
            Some(LevelChoice::Row) => ResampleLevel::Row,
            None if has_clusters => ResampleLevel::Cluster,
            None if design == Design::Panel => ResampleLevel::Unit,
            None => ResampleLevel::Row,
        };
        let boot = BootstrapConfig {
            replications: cfg.bootstrap_reps.unwrap_or(BootstrapConfig::default().replications),
            resample_level: level,
            seed: derive_seed(seed, &[2]),
        };
        let draws = bootstrap_draws(&data, estimator, &boot)?;
        let m = layout.pre_block_len();
        let se = draws.std_of(|d| severity(&cumulative_pre(d, m, mode), p).unwrap_or(f64::NAN));
        let label = format!("bootstrap ({:?} level, {} replicates)", level, boot.replications).to_lowercase();
        (point.with_covariance(draws.covariance())?, Some(se), label)
    } else {
        (point, None, "plug-in".to_string())
    };

    let estimand_weights = match &cfg.estimand_weights {
        None => None,
        Some(WeightList::List(v)) => Some(v.clone()),
        Some(WeightList::Text(s)) => Some(parse_number_list(s)?),
    };
    let params = InferenceParams {
        alpha: cfg.alpha.unwrap_or(0.05),
        mc_draws: cfg.mc_draws.unwrap_or(DEFAULT_MC_DRAWS),
        seed,
        severity: severity_params,
        estimand_weights,
    };
    let interval = confidence_interval(&theta, &params)?;

    Ok(AnalysisReport {
        data_path,
        design,
        estimator,
        covariance_source,
        n_rows: data.len(),
        layout,
        severity: severity_params,
        p_defaulted,
        theta,
        pretest: interval.pretest,
        interval,
        s_pre_bootstrap_se,
    })
}

fn design_name(d: Design) -> &'static str {
    match d {
        Design::Panel => "panel",
        Design::RepeatedCrossSection => "repeated cross-sections",
    }
}

pub fn render_text(r: &AnalysisReport, show_invalid: bool) -> String {
    let mut s = String::new();
    let layout = r.layout;
    let t0 = layout.treatment_time();
    let _ = writeln!(
        s,
        "data        {} ({} rows, {})",
        r.data_path.display(),
        r.n_rows,
        design_name(r.design)
    );
    let _ = writeln!(
        s,
        "periods     T = {}, first treated period t0 = {}, reference period {}",
        layout.total_periods(),
        t0,
        t0 - 1
    );
    let estimator = match r.estimator {
        PointEstimator::Means => "cell means",
        PointEstimator::Twfe => "two-way fixed effects",
    };
    let _ = writeln!(s, "estimator   {estimator}, covariance {}", r.covariance_source);
    let _ = writeln!(
        s,
        "severity    p = {}, M = {}, {} violations",
        r.severity.p, r.severity.threshold_m, r.severity.mode
    );

    let _ = writeln!(s, "\n{:<10}{:>8}{:>14}{:>12}", "term", "period", "estimate", "std.err");
    let cov = r.theta.covariance();
    for (i, v) in r.theta.values().iter().enumerate() {
        let (term, period) = if i < layout.pre_block_len() {
            ("r", i as u32 + 2)
        } else {
            ("dd", t0 + (i - layout.pre_block_len()) as u32)
        };
        let se = cov.map_or(f64::NAN, |c| c[(i, i)].max(0.0).sqrt());
        let _ = writeln!(s, "{term:<10}{period:>8}{v:>14.6}{se:>12.6}");
    }

    let pt = &r.pretest;
    let _ = writeln!(
        s,
        "\npretest     S_pre = {:.6}, M = {}, margin = {:.6}",
        pt.s_pre_hat, pt.threshold_m, pt.margin
    );
    if let Some(se) = r.s_pre_bootstrap_se {
        let _ = writeln!(s, "            bootstrap s.e. of S_pre = {se:.6} (diagnostic)");
    }
    if pt.rejects() {
        let _ = writeln!(
            s,
            "verdict     REJECT: estimated pre-treatment severity exceeds M; extrapolation is not warranted"
        );
    } else {
        let _ = writeln!(
            s,
            "verdict     PASS: post-treatment severity is assumed not to exceed S_pre"
        );
    }

    let iv = &r.interval;
    if pt.rejects() && !show_invalid {
        let _ = writeln!(
            s,
            "\nNo interval reported: it has no coverage guarantee when the pretest rejects (use --show-invalid to print it)."
        );
        return s;
    }
    let _ = writeln!(s, "\ninterval (alpha = {})", iv.alpha);
    if pt.rejects() {
        let _ = writeln!(s, "  WARNING   not conditionally valid (pretest rejected)");
    }
    let _ = writeln!(s, "  point            {:.6}", iv.point);
    let _ = writeln!(
        s,
        "  bias component   {:.6} (coefficient {:.6})",
        iv.bias_component, iv.bias_coefficient
    );
    let _ = writeln!(s, "  noise component  {:.6}", iv.noise_component);
    let _ = writeln!(s, "  half-width       {:.6}", iv.half_width);
    let _ = writeln!(s, "  interval         [{:.6}, {:.6}]", iv.lower, iv.upper);
    let _ = writeln!(
        s,
        "  conventional     [{:.6}, {:.6}] (assumes parallel trends)",
        iv.conventional_lower, iv.conventional_upper
    );
    s
}
