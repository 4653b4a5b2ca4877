//! Severity measures and the bias constants that turn pre-treatment
//! severity into a bound on `|tau_ATT - tau_DD|`.
//!
//! Severity of a block of violations `v_1..v_m` is the power mean
//! `((1/m) sum |v_i|^p)^(1/p)`, with `p = inf` meaning `max |v_i|`.

use serde::{Deserialize, Serialize};

use crate::domain::{NormOrder, SeverityParams, TimeLayout, ViolationMode};
use crate::error::{Error, Result};

/// A computed severity together with how it was aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityReport {
    pub s_value: f64,
    pub p: NormOrder,
    pub count: usize,
    pub mode: ViolationMode,
}

impl SeverityReport {
    pub fn compute(values: &[f64], p: NormOrder, mode: ViolationMode) -> Result<Self> {
        Ok(SeverityReport {
            s_value: severity(values, p)?,
            p,
            count: values.len(),
            mode,
        })
    }
}

/// `(sum |v_i|^p)^(1/p)` evaluated relative to the largest magnitude, so
/// that large `p` neither overflows nor underflows and scaling every input
/// by a power of two scales the output exactly.
fn lp_sum_root(values: &[f64], p: NormOrder) -> f64 {
    let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if p.is_infinite() || max == 0.0 {
        return max;
    }
    let p = p.value();
    if p == 1.0 {
        return values.iter().map(|v| v.abs()).sum();
    }
    let s: f64 = values.iter().map(|v| (v.abs() / max).powf(p)).sum();
    max * s.powf(1.0 / p)
}

/// Power mean of absolute values.
pub fn severity(values: &[f64], p: NormOrder) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("severity needs at least one violation term"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("severity input"));
    }
    Ok(power_mean(values, p))
}

pub(crate) fn power_mean(values: &[f64], p: NormOrder) -> f64 {
    let m = values.len() as f64;
    if p.is_infinite() {
        return lp_sum_root(values, p);
    }
    if p.value() == 1.0 {
        return lp_sum_root(values, p) / m;
    }
    lp_sum_root(values, p) * m.powf(-1.0 / p.value())
}

/// Bias constant for the uniform post-period average:
/// `((1/T_post) sum_{t=1}^{T_post} t^q)^(1/q)` with `q` conjugate to `p`.
pub fn kappa(post_length: usize, p: NormOrder) -> f64 {
    assert!(post_length >= 1, "post-treatment length must be positive");
    let q = p.conjugate();
    let t = post_length as f64;
    if q.is_infinite() {
        return t;
    }
    if q.value() == 1.0 {
        return (t + 1.0) / 2.0;
    }
    let ts: Vec<f64> = (1..=post_length).map(|t| t as f64).collect();
    power_mean(&ts, q)
}

/// Tail sums `C_s = sum_{t >= s} c_t`: the coefficient of the post-period
/// iterative violation `r_{t0 - 1 + s}` in `sum_t c_t Delta_t`.
fn tail_sums(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .iter()
        .rev()
        .map(|c| {
            acc += c;
            acc
        })
        .collect();
    out.reverse();
    out
}

/// Sharp bias constant for the weighted estimand `sum_t c_t ATT_t` under
/// iterative severity: `T_post^(1/p) * ||C||_q` where `C` are the tail sums
/// of the weights. For uniform weights `c_t = 1/T_post` this equals
/// [`kappa`].
pub fn kappa_lin(weights: &[f64], p: NormOrder) -> f64 {
    assert!(!weights.is_empty(), "estimand weights must be nonempty");
    let t = weights.len() as f64;
    let tails = tail_sums(weights);
    let lead = if p.is_infinite() { 1.0 } else { t.powf(1.0 / p.value()) };
    lead * lp_sum_root(&tails, p.conjugate())
}

/// Hölder constant for the weighted estimand when severity is measured on
/// overall violations: `T_post^(1/p) * ||c||_q`. Equals 1 for uniform weights.
pub fn kappa_lin_overall(weights: &[f64], p: NormOrder) -> f64 {
    assert!(!weights.is_empty(), "estimand weights must be nonempty");
    let t = weights.len() as f64;
    let lead = if p.is_infinite() { 1.0 } else { t.powf(1.0 / p.value()) };
    lead * lp_sum_root(weights, p.conjugate())
}

/// Coefficient multiplying the pre-treatment severity in the bias bound.
pub fn bias_coefficient(layout: TimeLayout, params: &SeverityParams, weights: Option<&[f64]>) -> Result<f64> {
    if let Some(c) = weights {
        if c.len() != layout.post_length() {
            return Err(Error::DimensionMismatch {
                context: "estimand weights",
                expected: layout.post_length(),
                actual: c.len(),
            });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("estimand weights"));
        }
    }
    Ok(match (params.mode, weights) {
        (ViolationMode::Iterative, None) => kappa(layout.post_length(), params.p),
        (ViolationMode::Overall, None) => 1.0,
        (ViolationMode::Iterative, Some(c)) => kappa_lin(c, params.p),
        (ViolationMode::Overall, Some(c)) => kappa_lin_overall(c, params.p),
    })
}

/// Upper bound on `|tau_ATT - tau_DD|` implied by pre-treatment severity
/// `s_pre`, valid when the extrapolation condition `s_pre <= M` holds.
pub fn bias_bound(s_pre: f64, layout: TimeLayout, params: &SeverityParams, weights: Option<&[f64]>) -> Result<f64> {
    if s_pre < 0.0 || !s_pre.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "pre-treatment severity must be finite and nonnegative, got {s_pre}"
        )));
    }
    Ok(bias_coefficient(layout, params, weights)? * s_pre)
}

/// `tau_DD - tau_ATT` induced by post-period iterative violations
/// `r_{t0} .. r_T` under the `t0 - 1` reference: `(1/T_post) sum_t sum_{s<=t} r_s`.
pub fn induced_gap(post_violations: &[f64]) -> f64 {
    let t = post_violations.len() as f64;
    let mut acc = 0.0;
    let mut total = 0.0;
    for r in post_violations {
        acc += r;
        total += acc;
    }
    total / t
}

/// Post-period iterative violations with severity `target` that attain the
/// bias bound `kappa * target`.
///
/// Hölder's inequality is tight when `|r_{t0-1+t}|^p` is proportional to
/// `(T_post - t + 1)^q` with all signs positive. For `p = 1` the mass
/// concentrates on the first post period; for `p = inf` the attaining
/// vector is constant.
pub fn worst_case_post_violations(layout: TimeLayout, p: NormOrder, target: f64) -> Result<Vec<f64>> {
    if target <= 0.0 || !target.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target severity must be positive and finite, got {target}"
        )));
    }
    let n = layout.post_length();
    let pattern: Vec<f64> = if p.value() == 1.0 {
        (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()
    } else if p.is_infinite() {
        vec![1.0; n]
    } else {
        let exponent = 1.0 / (p.value() - 1.0);
        (1..=n).map(|t| ((n - t + 1) as f64).powf(exponent)).collect()
    };
    let scale = target / power_mean(&pattern, p);
    Ok(pattern.into_iter().map(|w| w * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(v: f64) -> NormOrder {
        NormOrder::new(v).unwrap()
    }

    #[test]
    fn severity_examples() {
        assert_relative_eq!(
            severity(&[3.0, 4.0], p(2.0)).unwrap(),
            12.5f64.sqrt(),
            max_relative = 1e-15
        );
        assert_relative_eq!(severity(&[3.0, 4.0], p(2.0)).unwrap(), 3.5355339, epsilon = 1e-7);
        assert_eq!(severity(&[1.0, -2.0], NormOrder::INFINITY).unwrap(), 2.0);
        for pv in [1.0, 1.7, 2.0, 5.0, f64::INFINITY] {
            assert_relative_eq!(severity(&[-0.37], p(pv)).unwrap(), 0.37, max_relative = 1e-15);
        }
        assert!(matches!(severity(&[], NormOrder::TWO), Err(Error::Empty(_))));
        assert_eq!(severity(&[0.0, 0.0], NormOrder::TWO).unwrap(), 0.0);
    }

    #[test]
    fn kappa_examples() {
        for pv in [1.0, 2.0, 3.5, f64::INFINITY] {
            assert_eq!(kappa(1, p(pv)), 1.0);
        }
        assert_eq!(kappa(4, NormOrder::INFINITY), 2.5);
        assert_eq!(kappa(4, NormOrder::ONE), 4.0);
        assert_relative_eq!(kappa(4, NormOrder::TWO), 7.5f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(kappa(4, NormOrder::TWO), 2.7386128, epsilon = 1e-7);
    }

    #[test]
    fn kappa_lin_uniform_matches_kappa() {
        for t in 1..=6 {
            let c = vec![1.0 / t as f64; t];
            for pv in [1.0, 2.0, f64::INFINITY] {
                assert_relative_eq!(kappa_lin(&c, p(pv)), kappa(t, p(pv)), max_relative = 1e-12);
                assert_relative_eq!(kappa_lin_overall(&c, p(pv)), 1.0, max_relative = 1e-12);
            }
        }
        assert_eq!(kappa_lin(&[0.0, 0.0, 0.0], NormOrder::TWO), 0.0);
    }

    /// Brute-force sup of `|sum_t c_t Delta_t|` over post-period iterative
    /// violations on a grid, normalized to unit severity.
    fn brute_force_weighted_sup(c: &[f64], pv: NormOrder, steps: i32) -> f64 {
        let n = c.len();
        let mut best: f64 = 0.0;
        let total = (2 * steps + 1).pow(n as u32);
        for code in 0..total {
            let mut rem = code;
            let r: Vec<f64> = (0..n)
                .map(|_| {
                    let k = rem % (2 * steps + 1);
                    rem /= 2 * steps + 1;
                    (k - steps) as f64 / steps as f64
                })
                .collect();
            let s = power_mean(&r, pv);
            if s == 0.0 {
                continue;
            }
            let mut delta = 0.0;
            let val: f64 = r
                .iter()
                .zip(c)
                .map(|(ri, ci)| {
                    delta += ri;
                    ci * delta
                })
                .sum();
            best = best.max(val.abs() / s);
        }
        best
    }

    #[test]
    fn kappa_lin_matches_brute_force_sup() {
        let cases: Vec<Vec<f64>> = vec![
            vec![1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.5, -0.2, 0.7],
        ];
        for c in &cases {
            for pv in [NormOrder::ONE, NormOrder::TWO, NormOrder::INFINITY] {
                let formula = kappa_lin(c, pv);
                let brute = brute_force_weighted_sup(c, pv, 12);
                // the grid sup approaches from below
                assert!(brute <= formula * (1.0 + 1e-12), "c={c:?} p={pv}: {brute} > {formula}");
                assert!(brute >= formula * 0.97, "c={c:?} p={pv}: {brute} << {formula}");
            }
        }
    }

    #[test]
    fn bias_bound_modes() {
        let layout = TimeLayout::from_lengths(3, 4).unwrap();
        for mode in [ViolationMode::Iterative, ViolationMode::Overall] {
            let params = SeverityParams::new(NormOrder::INFINITY, 1.0, mode).unwrap();
            assert_eq!(bias_bound(0.0, layout, &params, None).unwrap(), 0.0);
            assert_eq!(
                bias_bound(0.0, layout, &params, Some(&[0.1, 0.2, 0.3, 0.4])).unwrap(),
                0.0
            );
        }
        let it = SeverityParams::new(NormOrder::INFINITY, 1.0, ViolationMode::Iterative).unwrap();
        assert_relative_eq!(bias_bound(0.4, layout, &it, None).unwrap(), 1.0, max_relative = 1e-15);
        let ov = SeverityParams::new(NormOrder::TWO, 1.0, ViolationMode::Overall).unwrap();
        assert_eq!(bias_bound(0.7, layout, &ov, None).unwrap(), 0.7);
        assert!(bias_bound(-0.1, layout, &it, None).is_err());
        assert!(bias_bound(0.1, layout, &it, Some(&[1.0])).is_err());
    }

    #[test]
    fn worst_case_examples() {
        let l1 = TimeLayout::from_lengths(2, 1).unwrap();
        for pv in [1.0, 2.0, f64::INFINITY] {
            let r = worst_case_post_violations(l1, p(pv), 0.3).unwrap();
            assert_relative_eq!(r[0], 0.3, max_relative = 1e-15);
            assert_relative_eq!(induced_gap(&r), 0.3, max_relative = 1e-15);
        }
        let l2 = TimeLayout::from_lengths(2, 2).unwrap();
        let c = 0.8;
        let r = worst_case_post_violations(l2, NormOrder::TWO, 2.5f64.sqrt() * c).unwrap();
        assert_relative_eq!(r[0], 2.0 * c, max_relative = 1e-12);
        assert_relative_eq!(r[1], c, max_relative = 1e-12);
        assert_relative_eq!(induced_gap(&r), 2.5 * c, max_relative = 1e-12);

        let l3 = TimeLayout::from_lengths(2, 3).unwrap();
        let r = worst_case_post_violations(l3, NormOrder::INFINITY, 0.5).unwrap();
        assert_eq!(r, vec![0.5, 0.5, 0.5]);
        assert_relative_eq!(
            induced_gap(&r),
            kappa(3, NormOrder::INFINITY) * 0.5,
            max_relative = 1e-15
        );
        assert!(worst_case_post_violations(l3, NormOrder::TWO, 0.0).is_err());
    }
}
