//! Simulation population: a deterministic AR(1)-plus-trend control mean,
//! rescaled sinusoidal parallel-trends violations, and a constant level
//! shift as the treatment effect. Samples imitate repeated cross-sections.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{iterative_to_overall, NormOrder, TimeLayout};
use crate::error::{Error, Result};
use crate::estimators::dataset::Row;
use crate::estimators::{Dataset, Design};
use crate::rng::stream_rng;
use crate::severity::power_mean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub layout: TimeLayout,
    /// Target pre-treatment severity `S_pre`.
    pub s_pre_target: f64,
    pub threshold_m: f64,
    pub p: NormOrder,
    pub trend_alpha: f64,
    pub ar_rho: f64,
    pub effect_beta: f64,
    pub sigma_treated: f64,
    pub sigma_control: f64,
    pub n_per_cell: usize,
}

impl DgpSpec {
    pub const DEFAULT_TREND_ALPHA: f64 = 0.3;
    pub const DEFAULT_AR_RHO: f64 = 0.7;
    pub const DEFAULT_EFFECT_BETA: f64 = 2.0;
    pub const DEFAULT_SIGMA_TREATED: f64 = 2.1;
    pub const DEFAULT_SIGMA_CONTROL: f64 = 1.5;

    pub fn new(layout: TimeLayout, s_pre_target: f64, threshold_m: f64, p: NormOrder, n_per_cell: usize) -> Self {
        DgpSpec {
            layout,
            s_pre_target,
            threshold_m,
            p,
            trend_alpha: Self::DEFAULT_TREND_ALPHA,
            ar_rho: Self::DEFAULT_AR_RHO,
            effect_beta: Self::DEFAULT_EFFECT_BETA,
            sigma_treated: Self::DEFAULT_SIGMA_TREATED,
            sigma_control: Self::DEFAULT_SIGMA_CONTROL,
            n_per_cell,
        }
    }

    /// Post-treatment severity: equal to `S_pre` when the extrapolation
    /// condition holds, ten times `S_pre` otherwise.
    pub fn s_post(&self) -> f64 {
        if self.s_pre_target <= self.threshold_m {
            self.s_pre_target
        } else {
            10.0 * self.s_pre_target
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, ok: bool, requirement: &str| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} must be {requirement}, got {v}"
                )))
            }
        };
        check(
            "s_pre_target",
            self.s_pre_target,
            self.s_pre_target >= 0.0,
            "finite and nonnegative",
        )?;
        check(
            "threshold_m",
            self.threshold_m,
            self.threshold_m >= 0.0,
            "finite and nonnegative",
        )?;
        check(
            "sigma_treated",
            self.sigma_treated,
            self.sigma_treated > 0.0,
            "finite and positive",
        )?;
        check(
            "sigma_control",
            self.sigma_control,
            self.sigma_control > 0.0,
            "finite and positive",
        )?;
        check("trend_alpha", self.trend_alpha, true, "finite")?;
        check("ar_rho", self.ar_rho, true, "finite")?;
        check("effect_beta", self.effect_beta, true, "finite")?;
        if self.n_per_cell < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_per_cell must be at least 2, got {}",
                self.n_per_cell
            )));
        }
        Ok(())
    }
}

/// Exact population quantities for one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub layout: TimeLayout,
    pub mean_control: Vec<f64>,
    pub mean_treated_untreated: Vec<f64>,
    pub mean_treated: Vec<f64>,
    /// Iterative violations `r_2 .. r_T`.
    pub violations_r: Vec<f64>,
    pub true_tau_att: f64,
    pub true_tau_dd: f64,
}

impl Population {
    /// Population value of the estimate vector: pre-period iterative
    /// violations followed by post-period double differences.
    pub fn theta(&self) -> Vec<f64> {
        let t0 = self.layout.treatment_time() as usize;
        let m1 = &self.mean_treated;
        let m0 = &self.mean_control;
        let dd = |t: usize, b: usize| (m1[t - 1] - m1[b - 1]) - (m0[t - 1] - m0[b - 1]);
        (2..t0)
            .map(|t| dd(t, t - 1))
            .chain((t0..=self.layout.total_periods() as usize).map(|t| dd(t, t0 - 1)))
            .collect()
    }

    /// `tau_DD - tau_ATT` from overall violations: the average over post
    /// periods of `Delta_t - Delta_{t0-1}`.
    pub fn gap_via_overall(&self) -> f64 {
        let mut r = vec![0.0];
        r.extend_from_slice(&self.violations_r);
        let delta = iterative_to_overall(&r).unwrap_or_default();
        let t0 = self.layout.treatment_time() as usize;
        let base = delta[t0 - 2];
        let post = &delta[t0 - 1..];
        post.iter().map(|d| d - base).sum::<f64>() / post.len() as f64
    }
}

/// Rescales `raw` to severity `target`; a zero target yields zeros.
fn rescale(raw: &[f64], p: NormOrder, target: f64, range: &str) -> Result<Vec<f64>> {
    if target == 0.0 {
        return Ok(vec![0.0; raw.len()]);
    }
    let s = power_mean(raw, p);
    if s == 0.0 {
        return Err(Error::Population(format!(
            "preliminary {range} violations have zero severity; cannot rescale"
        )));
    }
    Ok(raw.iter().map(|v| v * (target / s)).collect())
}

pub fn build_population(spec: &DgpSpec) -> Result<Population> {
    spec.validate()?;
    let layout = spec.layout;
    let t_total = layout.total_periods() as usize;
    let t0 = layout.treatment_time() as usize;
    let ln_t = (t_total as f64).ln();

    let raw: Vec<f64> = (2..=t_total)
        .map(|t| {
            let t = t as f64;
            ln_t * (t.sin() + (t / 2.0).cos())
        })
        .collect();
    // raw[i] is period i + 2
    let (raw_pre, raw_post) = raw.split_at(t0 - 2);
    let mut violations_r = rescale(raw_pre, spec.p, spec.s_pre_target, "pre-treatment")?;
    violations_r.extend(rescale(raw_post, spec.p, spec.s_post(), "post-treatment")?);

    let mut mean_control = Vec::with_capacity(t_total);
    let mut prev = 0.0;
    for t in 1..=t_total {
        let tf = t as f64;
        prev = spec.ar_rho * prev + spec.trend_alpha * tf + ln_t * (tf.cos() + (tf / 2.0).sin());
        mean_control.push(prev);
    }

    let mut cumulative = 0.0;
    let mut mean_treated_untreated = Vec::with_capacity(t_total);
    let mut mean_treated = Vec::with_capacity(t_total);
    for t in 1..=t_total {
        if t >= 2 {
            cumulative += violations_r[t - 2];
        }
        let untreated = mean_control[t - 1] + cumulative;
        mean_treated_untreated.push(untreated);
        mean_treated.push(untreated + if t >= t0 { spec.effect_beta } else { 0.0 });
    }

    let t_post = layout.post_length() as f64;
    let att = (t0..=t_total)
        .map(|t| mean_treated[t - 1] - mean_treated_untreated[t - 1])
        .sum::<f64>()
        / t_post;
    let dd = |t: usize| (mean_treated[t - 1] - mean_treated[t0 - 2]) - (mean_control[t - 1] - mean_control[t0 - 2]);
    let tau_dd = (t0..=t_total).map(dd).sum::<f64>() / t_post;

    Ok(Population {
        layout,
        mean_control,
        mean_treated_untreated,
        mean_treated,
        violations_r,
        true_tau_att: att,
        true_tau_dd: tau_dd,
    })
}

/// Independent normal draws for every (group, period) cell. Cell `c`
/// draws from its own random stream, so the sample is a pure function of
/// `seed`.
pub fn sample_dataset(pop: &Population, spec: &DgpSpec, seed: u64) -> Result<Dataset> {
    let layout = pop.layout;
    let t_total = layout.total_periods();
    let n = spec.n_per_cell;
    let mut rows = Vec::with_capacity(2 * n * t_total as usize);
    for (g, treated) in [false, true].into_iter().enumerate() {
        let (means, sigma) = if treated {
            (&pop.mean_treated, spec.sigma_treated)
        } else {
            (&pop.mean_control, spec.sigma_control)
        };
        for t in 1..=t_total {
            let dist = Normal::new(means[t as usize - 1], sigma)
                .map_err(|e| Error::InvalidParameter(format!("normal distribution: {e}")))?;
            let mut rng = stream_rng(seed, g as u64 * u64::from(t_total) + u64::from(t));
            rows.extend((0..n).map(|_| Row {
                unit: None,
                cluster: None,
                time: t,
                treated,
                outcome: dist.sample(&mut rng),
                weight: 1.0,
            }));
        }
    }
    Ok(Dataset::from_rows(Design::RepeatedCrossSection, layout, rows, 0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::estimate_theta_sample_means;
    use crate::severity::{kappa, severity};
    use approx::assert_relative_eq;

    fn spec(t_pre: u32, t_post: u32, s_pre: f64, m: f64, p: NormOrder) -> DgpSpec {
        DgpSpec::new(TimeLayout::from_lengths(t_pre, t_post).unwrap(), s_pre, m, p, 50)
    }

    #[test]
    fn first_control_mean() {
        let pop = build_population(&spec(3, 1, 1.0, 2.0, NormOrder::TWO)).unwrap();
        let expected = 0.3 + 4f64.ln() * (1f64.cos() + 0.5f64.sin());
        assert_relative_eq!(pop.mean_control[0], expected, max_relative = 1e-15);
        assert_relative_eq!(pop.mean_control[0], 1.7136, epsilon = 1e-4);
    }

    #[test]
    fn rescaled_severities() {
        for p in [
            NormOrder::ONE,
            NormOrder::TWO,
            NormOrder::new(3.3).unwrap(),
            NormOrder::INFINITY,
        ] {
            let s = spec(5, 4, 1.7, 2.0, p);
            let pop = build_population(&s).unwrap();
            let (pre, post) = pop.violations_r.split_at(4);
            assert_relative_eq!(severity(pre, p).unwrap(), 1.7, max_relative = 1e-12);
            assert_relative_eq!(severity(post, p).unwrap(), 1.7, max_relative = 1e-12);
        }
    }

    #[test]
    fn post_severity_rule() {
        assert_eq!(spec(3, 1, 1.5, 2.0, NormOrder::TWO).s_post(), 1.5);
        assert_eq!(spec(3, 1, 2.5, 2.0, NormOrder::TWO).s_post(), 25.0);
    }

    #[test]
    fn invariants_and_oracles() {
        let s = spec(4, 3, 0.8, 1.0, NormOrder::TWO);
        let pop = build_population(&s).unwrap();
        let mut cum = 0.0;
        for t in 0..7 {
            if t >= 1 {
                cum += pop.violations_r[t - 1];
            }
            assert_relative_eq!(
                pop.mean_treated_untreated[t] - pop.mean_control[t],
                cum,
                epsilon = 1e-12
            );
            let effect = if t + 1 >= 5 { 2.0 } else { 0.0 };
            assert_relative_eq!(
                pop.mean_treated[t] - pop.mean_treated_untreated[t],
                effect,
                epsilon = 1e-12
            );
        }
        assert_relative_eq!(pop.true_tau_att, 2.0, epsilon = 1e-12);
        assert_relative_eq!(
            pop.true_tau_dd - pop.true_tau_att,
            pop.gap_via_overall(),
            epsilon = 1e-12
        );
        assert!((pop.true_tau_att - pop.true_tau_dd).abs() <= kappa(3, NormOrder::TWO) * 0.8 + 1e-10);
    }

    #[test]
    fn zero_severity_short_circuits() {
        let pop = build_population(&spec(3, 2, 0.0, 1.0, NormOrder::TWO)).unwrap();
        assert!(pop.violations_r.iter().all(|&r| r == 0.0));
        assert_relative_eq!(pop.true_tau_dd, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn near_noiseless_recovery() {
        let mut s = spec(4, 3, 0.6, 1.0, NormOrder::INFINITY);
        s.sigma_control = 1e-9;
        s.sigma_treated = 1e-9;
        let pop = build_population(&s).unwrap();
        let est = estimate_theta_sample_means(&sample_dataset(&pop, &s, 3).unwrap()).unwrap();
        for (a, b) in est.values().iter().zip(pop.theta()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let s = spec(3, 1, 1.0, 2.0, NormOrder::TWO);
        let pop = build_population(&s).unwrap();
        let a = estimate_theta_sample_means(&sample_dataset(&pop, &s, 11).unwrap()).unwrap();
        let b = estimate_theta_sample_means(&sample_dataset(&pop, &s, 11).unwrap()).unwrap();
        let c = estimate_theta_sample_means(&sample_dataset(&pop, &s, 12).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn validation() {
        let mut s = spec(3, 1, 1.0, 2.0, NormOrder::TWO);
        s.sigma_control = 0.0;
        let err = build_population(&s).unwrap_err().to_string();
        assert!(err.contains("sigma_control must be finite and positive"), "{err}");
        s.sigma_control = 1.0;
        s.n_per_cell = 1;
        assert!(build_population(&s).is_err());
    }
}
