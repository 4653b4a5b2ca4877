//! Command-line front end: `analyze`, `simulate` and `critval`.
//!
//! Exit status: 0 on success, 1 when output cannot be written, 2 on
//! invalid input, 3 when `analyze --fail-on-reject` sees the pretest
//! reject.

pub mod analyze;
pub mod input;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::domain::{NormOrder, SeverityParams, TimeLayout, ViolationMode};
use crate::error::Error;
use crate::inference::{critical_value, DEFAULT_MC_DRAWS};
use crate::sim::{load_experiment_config, run_experiment, ExperimentResult, Metric};
use analyze::{render_text, run_analysis, AnalyzeArgs, OutputFormat};
use input::{parse_number_list, read_matrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_REJECT: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "didguard",
    version,
    about = "Conditional extrapolation pretests and intervals for difference-in-differences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate violations, run the severity pretest and report an interval.
    Analyze(AnalyzeArgs),
    /// Run a Monte-Carlo experiment described by a TOML file.
    Simulate(SimulateArgs),
    /// Monte-Carlo critical value for a given covariance matrix.
    Critval(CritvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment file with [experiment], [dgp] and [grid] sections.
    pub config: PathBuf,
    #[arg(long, default_value = "sim-output")]
    pub out_dir: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "DIDGUARD_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mc_draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CritvalArgs {
    /// CSV with a square covariance matrix of size T - 1.
    #[arg(long)]
    pub sigma: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(short = 'p', long, default_value = "2")]
    pub p: NormOrder,
    #[arg(long)]
    pub t0: u32,
    /// Total number of periods T.
    #[arg(short = 'T', long = "periods")]
    pub periods: u32,
    #[arg(long, default_value = "iterative")]
    pub mode: ViolationMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    pub draws: usize,
    /// Comma-separated weights over the post-treatment periods.
    #[arg(long)]
    pub estimand_weights: Option<String>,
}

/// Failure with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: e.to_string(),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError {
        code: EXIT_IO,
        message: format!("cannot write {}: {e}", path.display()),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError {
            code: EXIT_IO,
            message: format!("writing to stdout: {e}"),
        }),
        _ => Ok(()),
    }
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<i32, CliError> {
    let cfg = args.resolve()?;
    let report = run_analysis(&cfg)?;
    if report.p_defaulted {
        eprintln!("note: no severity order given; using p = 2");
    }
    match cfg.output.unwrap_or_default() {
        OutputFormat::Text => emit(&render_text(&report, cfg.show_invalid.unwrap_or(false)))?,
        OutputFormat::Json => {
            let json = serde_json::to_string_pretty(&report).map_err(|e| CliError {
                code: EXIT_IO,
                message: format!("serializing report: {e}"),
            })?;
            emit(&format!("{json}\n"))?;
        }
    }
    if report.pretest.rejects() && cfg.fail_on_reject.unwrap_or(false) {
        return Ok(EXIT_REJECT);
    }
    Ok(EXIT_OK)
}

fn summary(result: &ExperimentResult) -> String {
    let metrics: Vec<Metric> = {
        let mut m: Vec<Metric> = Vec::new();
        for r in &result.rows {
            if !m.contains(&r.metric) {
                m.push(r.metric);
            }
        }
        m
    };
    let mut out = format!("{:>4} {:>14}", "id", result.spec.x_axis.name());
    for m in &metrics {
        out.push_str(&format!(" {:>14}", short_name(*m)));
    }
    out.push('\n');
    for id in 0..result.scenarios.len() {
        let x = result.value(id, metrics[0]).map_or("", |r| r.x_value.as_str());
        out.push_str(&format!("{id:>4} {x:>14}"));
        for m in &metrics {
            let v = result
                .value(id, *m)
                .and_then(|r| r.value)
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(" {v:>14}"));
        }
        out.push('\n');
    }
    out
}

fn short_name(m: Metric) -> &'static str {
    match m {
        Metric::RejectionRate => "reject",
        Metric::ConditionalCoverage => "cond.cov",
        Metric::ConventionalConditionalCoverage => "conv.cond.cov",
        Metric::ValidReporting => "valid.report",
        Metric::ExpectedWidth => "width",
        Metric::MeanPointEstimate => "mean.point",
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let mut spec = load_experiment_config(&args.config)?;
    if let Some(r) = args.replications {
        spec.replications = r;
    }
    if let Some(s) = args.seed {
        spec.master_seed = s;
    }
    if let Some(d) = args.mc_draws {
        spec.mc_draws = d;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()).into());
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError {
        code: EXIT_IO,
        message: format!("cannot start worker threads: {e}"),
    })?;
    let result = pool.install(|| run_experiment(&spec))?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_error(&args.out_dir, e))?;
    let main_path = args.out_dir.join(format!("{}.csv", spec.name));
    let scen_path = args.out_dir.join(format!("{}_scenarios.csv", spec.name));
    let f = std::fs::File::create(&main_path).map_err(|e| io_error(&main_path, e))?;
    result.write_csv(f).map_err(|e| io_error(&main_path, e))?;
    let f = std::fs::File::create(&scen_path).map_err(|e| io_error(&scen_path, e))?;
    result.write_scenarios_csv(f).map_err(|e| io_error(&scen_path, e))?;

    emit(&format!(
        "{} ({}, {} scenarios x {} replications, seed {})\n{}wrote {} and {}\n",
        spec.name,
        spec.kind,
        result.scenarios.len(),
        spec.replications,
        spec.master_seed,
        summary(&result),
        main_path.display(),
        scen_path.display()
    ))?;
    Ok(EXIT_OK)
}

fn cmd_critval(args: &CritvalArgs) -> Result<i32, CliError> {
    let layout = TimeLayout::new(args.periods, args.t0)?;
    let sigma = read_matrix(&args.sigma)?;
    if sigma.nrows() != layout.theta_length() {
        return Err(Error::DimensionMismatch {
            context: "covariance matrix (must be (T-1) x (T-1))",
            expected: layout.theta_length(),
            actual: sigma.nrows(),
        }
        .into());
    }
    // threshold does not enter the critical value
    let params = SeverityParams::new(args.p, 0.0, args.mode)?;
    let weights = args.estimand_weights.as_deref().map(parse_number_list).transpose()?;
    let cv = critical_value(
        args.alpha,
        &sigma,
        layout,
        &params,
        weights.as_deref(),
        args.seed,
        args.draws,
    )?;
    emit(&format!("{cv:.6}\n"))?;
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Critval(a) => cmd_critval(a),
    }
}

/// Parses the process arguments, runs the command and returns the exit
/// status.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
