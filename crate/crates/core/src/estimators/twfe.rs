//! Two-way fixed-effects lead/lag regression
//!
//! `Y_it = alpha_i + lambda_t + sum_{s <= t0-2} delta_s D_i 1{t = s}
//!         + sum_{s >= t0} beta_s D_i 1{t = s} + e_it`, with `delta_{t0-1} = 0`.
//!
//! Panel data use unit fixed effects, removed by the within transform
//! (exact for balanced panels). Repeated cross-sections replace the unit
//! effect by a group effect. Every regressor is constant within a
//! (group, period) cell, so the normal equations are accumulated per cell.

use nalgebra::{DMatrix, DVector};

use super::dataset::{cell_index, Dataset, Design};
use crate::domain::ThetaEstimate;
use crate::error::{Error, Result};

const RANK_TOLERANCE: f64 = 1e-10;

/// Regressor values for a row in cell `(treated, t)`.
fn regressors(design: Design, t_total: u32, t0: u32, treated: bool, t: u32) -> Vec<f64> {
    let d = if treated { 1.0 } else { 0.0 };
    let ind = |s: u32| if t == s { 1.0 } else { 0.0 };
    let interaction_periods = (1..t0 - 1).chain(t0..=t_total);
    match design {
        Design::Panel => {
            let tbar = 1.0 / f64::from(t_total);
            (2..=t_total)
                .map(|s| ind(s) - tbar)
                .chain(interaction_periods.map(|s| d * (ind(s) - tbar)))
                .collect()
        }
        Design::RepeatedCrossSection => [1.0, d]
            .into_iter()
            .chain((2..=t_total).map(ind))
            .chain(interaction_periods.map(|s| d * ind(s)))
            .collect(),
    }
}

pub(crate) fn point_twfe(data: &Dataset) -> Result<Vec<f64>> {
    if !data.is_unweighted() {
        return Err(Error::Unsupported(
            "the fixed-effects estimator does not accept observation weights".into(),
        ));
    }
    let layout = data.layout();
    let t_total = layout.total_periods();
    let t0 = layout.treatment_time();
    let design = data.design();

    // outcome after removing unit means (panel) or as is (cross-sections)
    let adjusted: Vec<f64> = match design {
        Design::Panel => {
            let n_units = data.n_units();
            let mut sum = vec![0.0; n_units];
            let mut cnt = vec![0usize; n_units];
            for r in &data.rows {
                let u = r
                    .unit
                    .ok_or_else(|| Error::InvalidData("panel row without unit_id".into()))?
                    as usize;
                sum[u] += r.outcome;
                cnt[u] += 1;
            }
            data.rows
                .iter()
                .map(|r| {
                    let u = r.unit.unwrap_or_default() as usize;
                    r.outcome - sum[u] / cnt[u] as f64
                })
                .collect()
        }
        Design::RepeatedCrossSection => data.rows.iter().map(|r| r.outcome).collect(),
    };

    let cells = 2 * t_total as usize;
    let mut y_sum = vec![0.0; cells];
    for (r, y) in data.rows.iter().zip(&adjusted) {
        y_sum[cell_index(layout, r.treated, r.time)] += y;
    }

    let k = regressors(design, t_total, t0, false, 1).len();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for treated in [false, true] {
        for t in 1..=t_total {
            let c = cell_index(layout, treated, t);
            let n = data.cell_counts()[c] as f64;
            if n == 0.0 {
                continue;
            }
            let x = DVector::from_vec(regressors(design, t_total, t0, treated, t));
            xtx.ger(n, &x, &x, 1.0);
            xty.axpy(y_sum[c], &x, 1.0);
        }
    }

    let svd = xtx.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = RANK_TOLERANCE * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < k {
        return Err(Error::RankDeficient { rank, columns: k });
    }
    let coef = svd
        .solve(&xty, tol)
        .map_err(|e| Error::InvalidData(format!("least squares solve failed: {e}")))?;

    // interaction coefficients follow the intercept/group/time columns
    let offset = k - (t_total as usize - 1);
    let n_leads = (t0 - 2) as usize;
    // delta_1 .. delta_{t0-2}, then delta_{t0-1} = 0
    let mut delta: Vec<f64> = coef.as_slice()[offset..offset + n_leads].to_vec();
    delta.push(0.0);
    let mut theta: Vec<f64> = delta.windows(2).map(|w| w[1] - w[0]).collect();
    theta.extend_from_slice(&coef.as_slice()[offset + n_leads..]);
    Ok(theta)
}

/// Lead/lag fixed-effects estimate. Iterative violations are differences
/// of consecutive lead coefficients; the post block holds the lag
/// coefficients. No covariance is attached.
pub fn estimate_theta_twfe(data: &Dataset) -> Result<ThetaEstimate> {
    let values = point_twfe(data)?;
    ThetaEstimate::new(data.layout(), values, None, data.min_cell_count())
}
