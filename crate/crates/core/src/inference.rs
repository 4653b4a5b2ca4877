//! Conditionally valid confidence intervals for the average (or weighted)
//! post-treatment ATT.
//!
//! The interval is `tau_DD_hat +/- (bias + noise)` where `bias` is the bias
//! coefficient times the estimated pre-treatment severity and `noise` is the
//! `(1 - alpha)` quantile of `psi(Z)`, `Z ~ N(0, Sigma)`. `Sigma` is the
//! finite-sample covariance of the estimate vector; because `psi` is
//! positively homogeneous of degree one, this equals the asymptotic critical
//! value divided by `sqrt(n)`.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{SeverityParams, ThetaEstimate, TimeLayout, ViolationMode, PSD_TOLERANCE};
use crate::error::{Error, Result};
use crate::pretest::PretestResult;
use crate::rng::stream_rng;
use crate::severity::{bias_coefficient, power_mean, severity};

pub const DEFAULT_MC_DRAWS: usize = 5000;
pub const MIN_MC_DRAWS: usize = 1000;
/// Draws per random stream when sampling `N(0, Sigma)`.
const DRAW_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceParams {
    pub alpha: f64,
    pub mc_draws: usize,
    pub seed: u64,
    pub severity: SeverityParams,
    /// Weights `c_t` over post periods; `None` is the uniform average.
    pub estimand_weights: Option<Vec<f64>>,
}

impl InferenceParams {
    pub fn new(severity: SeverityParams) -> Self {
        InferenceParams {
            alpha: 0.05,
            mc_draws: DEFAULT_MC_DRAWS,
            seed: 0,
            severity,
            estimand_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.mc_draws < MIN_MC_DRAWS {
            return Err(Error::InvalidParameter(format!(
                "need at least {MIN_MC_DRAWS} Monte-Carlo draws, got {}",
                self.mc_draws
            )));
        }
        if self.mc_draws < DEFAULT_MC_DRAWS {
            log::warn!(
                "{} Monte-Carlo draws for the critical value (recommended {DEFAULT_MC_DRAWS})",
                self.mc_draws
            );
        }
        self.severity.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub point: f64,
    pub half_width: f64,
    pub lower: f64,
    pub upper: f64,
    /// Bias coefficient times estimated pre-treatment severity.
    pub bias_component: f64,
    pub noise_component: f64,
    pub critical_value: f64,
    pub bias_coefficient: f64,
    pub alpha: f64,
    pub conventional_se: f64,
    pub conventional_z: f64,
    pub conventional_lower: f64,
    pub conventional_upper: f64,
    /// False when the pretest rejected; the interval then carries no
    /// coverage guarantee.
    pub conditionally_valid: bool,
    pub pretest: PretestResult,
}

impl IntervalReport {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn conventional_contains(&self, value: f64) -> bool {
        self.conventional_lower <= value && value <= self.conventional_upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Evaluation of `psi` with the bias coefficient resolved once.
#[derive(Debug, Clone)]
struct Psi<'a> {
    pre_len: usize,
    coefficient: f64,
    p: crate::domain::NormOrder,
    weights: Option<&'a [f64]>,
}

impl<'a> Psi<'a> {
    fn new(layout: TimeLayout, params: &SeverityParams, weights: Option<&'a [f64]>) -> Result<Self> {
        Ok(Psi {
            pre_len: layout.pre_block_len(),
            coefficient: bias_coefficient(layout, params, weights)?,
            p: params.p,
            weights,
        })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let (pre, post) = x.split_at(self.pre_len);
        let post_term = match self.weights {
            Some(c) => c.iter().zip(post).map(|(c, v)| c * v).sum::<f64>().abs(),
            None => (post.iter().sum::<f64>() / post.len() as f64).abs(),
        };
        post_term + self.coefficient * power_mean(pre, self.p)
    }
}

/// `psi(x) = |post average of x| + coefficient * severity(pre block of x)`.
///
/// The coefficient is `kappa` (iterative), 1 (overall) or the weighted
/// analogue; with weights the post term is `|sum_t c_t x_t|`.
pub fn psi_statistic(x: &[f64], layout: TimeLayout, params: &SeverityParams, weights: Option<&[f64]>) -> Result<f64> {
    if x.len() != layout.theta_length() {
        return Err(Error::DimensionMismatch {
            context: "psi argument",
            expected: layout.theta_length(),
            actual: x.len(),
        });
    }
    Ok(Psi::new(layout, params, weights)?.eval(x))
}

/// Square-root factor `A` with `A A^T = Sigma`, from the symmetric
/// eigendecomposition. Slightly negative eigenvalues (within the PSD
/// tolerance) are clamped to zero; only columns with positive eigenvalues
/// are kept.
fn sqrt_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = sigma.nrows();
    if sigma.ncols() != k {
        return Err(Error::DimensionMismatch {
            context: "covariance must be square",
            expected: k,
            actual: sigma.ncols(),
        });
    }
    let sym = crate::domain::validate_covariance(sigma)?;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * max.max(0.0) {
        return Err(Error::NotPositiveSemidefinite { min, max });
    }
    let keep: Vec<usize> = (0..k).filter(|&j| eig.eigenvalues[j] > 0.0).collect();
    Ok(DMatrix::from_fn(k, keep.len(), |i, c| {
        let j = keep[c];
        eig.eigenvectors[(i, j)] * eig.eigenvalues[j].sqrt()
    }))
}

/// 1-based rank of the upper empirical `(1 - alpha)` quantile,
/// `ceil((1 - alpha) * S)`, guarded against floating-point overshoot.
pub fn quantile_rank(alpha: f64, draws: usize) -> usize {
    let raw = (1.0 - alpha) * draws as f64;
    let mut k = raw.ceil();
    if k - raw > 1.0 - 1e-9 {
        k -= 1.0;
    }
    (k as usize).clamp(1, draws)
}

/// Monte-Carlo `(1 - alpha)` critical value of `psi(Z)`, `Z ~ N(0, sigma)`.
///
/// Draw `j` uses normal variates from stream `j / 256` under `seed`, so the
/// result is a deterministic function of the inputs regardless of thread
/// count. Sharing the seed across calls gives common random numbers.
pub fn critical_value(
    alpha: f64,
    sigma: &DMatrix<f64>,
    layout: TimeLayout,
    params: &SeverityParams,
    weights: Option<&[f64]>,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidParameter("need at least one Monte-Carlo draw".into()));
    }
    let k = layout.theta_length();
    if sigma.nrows() != k {
        return Err(Error::DimensionMismatch {
            context: "covariance for critical value",
            expected: k,
            actual: sigma.nrows(),
        });
    }
    let psi = Psi::new(layout, params, weights)?;
    let factor = sqrt_factor(sigma)?;
    let rank = factor.ncols();
    if rank == 0 {
        return Ok(0.0);
    }
    // row-major copy for the inner loop
    let a: Vec<f64> = (0..k)
        .flat_map(|i| factor.row(i).iter().copied().collect::<Vec<_>>())
        .collect();

    let n_chunks = draws.div_ceil(DRAW_CHUNK);
    let mut values: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = DRAW_CHUNK.min(draws - c * DRAW_CHUNK);
            let mut eps = vec![0.0; rank];
            let mut z = vec![0.0; k];
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                eps.iter_mut().for_each(|e| *e = StandardNormal.sample(&mut rng));
                for (i, zi) in z.iter_mut().enumerate() {
                    let row = &a[i * rank..(i + 1) * rank];
                    *zi = row.iter().zip(&eps).map(|(r, e)| r * e).sum();
                }
                out.push(psi.eval(&z));
            }
            out
        })
        .collect();
    values.sort_by(f64::total_cmp);
    Ok(values[quantile_rank(alpha, draws) - 1])
}

/// Standard normal quantile.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

/// Post-period aggregation weights: explicit, or uniform `1/T_post`.
fn post_weights(layout: TimeLayout, weights: Option<&[f64]>) -> Vec<f64> {
    match weights {
        Some(c) => c.to_vec(),
        None => vec![1.0 / layout.post_length() as f64; layout.post_length()],
    }
}

/// Pretest plus interval. The interval is always computed; when the
/// pretest rejects it is flagged as not conditionally valid.
pub fn confidence_interval(est: &ThetaEstimate, params: &InferenceParams) -> Result<IntervalReport> {
    params.validate()?;
    let sev = &params.severity;
    let layout = est.layout();
    let weights = params.estimand_weights.as_deref();
    let working = match (sev.mode, est.mode()) {
        (ViolationMode::Overall, ViolationMode::Iterative) => est.to_overall()?,
        (ViolationMode::Iterative, ViolationMode::Overall) => {
            return Err(Error::InvalidParameter(
                "iterative-mode inference needs an estimate in iterative violations".into(),
            ))
        }
        _ => est.clone(),
    };
    let sigma = working.covariance().ok_or(Error::MissingCovariance)?;

    let s_pre_hat = severity(working.pre_block(), sev.p)?;
    let pretest = PretestResult::from_severity(s_pre_hat, sev.threshold_m, sev.mode);

    let coefficient = bias_coefficient(layout, sev, weights)?;
    let c = post_weights(layout, weights);
    let point: f64 = c.iter().zip(working.post_block()).map(|(c, v)| c * v).sum();
    let bias_component = coefficient * s_pre_hat;
    let cv = critical_value(params.alpha, sigma, layout, sev, weights, params.seed, params.mc_draws)?;
    let half_width = bias_component + cv;

    let m = layout.pre_block_len();
    let mut var = 0.0;
    for (i, ci) in c.iter().enumerate() {
        for (j, cj) in c.iter().enumerate() {
            var += ci * cj * sigma[(m + i, m + j)];
        }
    }
    let conventional_se = var.max(0.0).sqrt();
    let z = normal_quantile(1.0 - params.alpha / 2.0);

    Ok(IntervalReport {
        point,
        half_width,
        lower: point - half_width,
        upper: point + half_width,
        bias_component,
        noise_component: cv,
        critical_value: cv,
        bias_coefficient: coefficient,
        alpha: params.alpha,
        conventional_se,
        conventional_z: z,
        conventional_lower: point - z * conventional_se,
        conventional_upper: point + z * conventional_se,
        conditionally_valid: pretest.extrapolation_declared(),
        pretest,
    })
}
