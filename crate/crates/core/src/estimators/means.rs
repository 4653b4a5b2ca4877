//! Nonparametric (optionally weighted) cell-mean estimator of the violation
//! and DID vector, with the plug-in covariance for repeated cross-sections.

use nalgebra::DMatrix;

use super::dataset::{cell_index, Dataset, Design};
use crate::domain::{ThetaEstimate, TimeLayout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CellSummary {
    pub mean: f64,
    /// Estimated variance of the weighted cell mean.
    pub var_of_mean: f64,
}

/// Weighted mean per cell; variance of the mean from the weighted sample
/// variance over the effective cell size `(sum w)^2 / sum w^2`.
pub(crate) fn cell_summaries(data: &Dataset, with_variance: bool) -> Vec<CellSummary> {
    let layout = data.layout();
    let k = 2 * layout.total_periods() as usize;
    let mut w_sum = vec![0.0; k];
    let mut wy_sum = vec![0.0; k];
    let mut w2_sum = vec![0.0; k];
    for r in &data.rows {
        let c = cell_index(layout, r.treated, r.time);
        w_sum[c] += r.weight;
        wy_sum[c] += r.weight * r.outcome;
        w2_sum[c] += r.weight * r.weight;
    }
    let mut cells: Vec<CellSummary> = (0..k)
        .map(|c| CellSummary {
            mean: wy_sum[c] / w_sum[c],
            var_of_mean: 0.0,
        })
        .collect();
    if with_variance {
        let mut ss = vec![0.0; k];
        for r in &data.rows {
            let c = cell_index(layout, r.treated, r.time);
            let d = r.outcome - cells[c].mean;
            ss[c] += r.weight * d * d;
        }
        for c in 0..k {
            let n_eff = w_sum[c] * w_sum[c] / w2_sum[c];
            let var = ss[c] / w_sum[c] * n_eff / (n_eff - 1.0);
            cells[c].var_of_mean = var / n_eff;
        }
    }
    cells
}

/// Linear map from the `2T` cell means (control block, then treated block)
/// to the estimate vector.
pub(crate) fn contrast_matrix(layout: TimeLayout) -> DMatrix<f64> {
    let t_total = layout.total_periods();
    let t0 = layout.treatment_time();
    let k = layout.theta_length();
    let mut a = DMatrix::zeros(k, 2 * t_total as usize);
    let mut add_double_difference = |row: usize, t: u32, base: u32| {
        a[(row, cell_index(layout, true, t))] += 1.0;
        a[(row, cell_index(layout, true, base))] -= 1.0;
        a[(row, cell_index(layout, false, t))] -= 1.0;
        a[(row, cell_index(layout, false, base))] += 1.0;
    };
    let mut row = 0;
    for t in 2..t0 {
        add_double_difference(row, t, t - 1);
        row += 1;
    }
    for t in t0..=t_total {
        add_double_difference(row, t, t0 - 1);
        row += 1;
    }
    a
}

pub(crate) fn theta_from_means(layout: TimeLayout, means: &[f64]) -> Vec<f64> {
    let t_total = layout.total_periods();
    let t0 = layout.treatment_time();
    let m = |treated: bool, t: u32| means[cell_index(layout, treated, t)];
    let dd = |t: u32, base: u32| (m(true, t) - m(true, base)) - (m(false, t) - m(false, base));
    (2..t0)
        .map(|t| dd(t, t - 1))
        .chain((t0..=t_total).map(|t| dd(t, t0 - 1)))
        .collect()
}

pub(crate) fn point_sample_means(data: &Dataset) -> Vec<f64> {
    let cells = cell_summaries(data, false);
    let means: Vec<f64> = cells.iter().map(|c| c.mean).collect();
    theta_from_means(data.layout(), &means)
}

/// Cell-mean estimate. Repeated cross-sections carry the plug-in
/// covariance; panel estimates carry none (pair them with the bootstrap).
pub fn estimate_theta_sample_means(data: &Dataset) -> Result<ThetaEstimate> {
    let layout = data.layout();
    let covariance = match data.design() {
        Design::RepeatedCrossSection => Some(plugin_covariance(data)?),
        Design::Panel => None,
    };
    let values = point_sample_means(data);
    ThetaEstimate::new(layout, values, covariance, data.min_cell_count())
}

/// Plug-in covariance under independence across cells. Refused for panel
/// data, where serial correlation within units invalidates it.
pub fn plugin_covariance(data: &Dataset) -> Result<DMatrix<f64>> {
    if data.design() == Design::Panel {
        return Err(Error::PanelNeedsBootstrap);
    }
    if let Some((c, _)) = data.cell_counts().iter().enumerate().find(|(_, &n)| n < 2) {
        let t_total = data.layout().total_periods() as usize;
        return Err(Error::SparseCell {
            treated: c >= t_total,
            period: (c % t_total) as u32 + 1,
            count: data.cell_counts()[c],
            required: 2,
        });
    }
    let cells = cell_summaries(data, true);
    let a = contrast_matrix(data.layout());
    let v = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        cells.len(),
        cells.iter().map(|c| c.var_of_mean),
    ));
    let cov = &a * v * a.transpose();
    Ok((&cov + cov.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::dataset::Observation;
    use approx::assert_relative_eq;

    /// Two rows per cell placed symmetrically around the requested mean.
    fn rcs_from_means(treated_means: &[f64], control_means: &[f64], spread: f64) -> Dataset {
        let t = treated_means.len() as u32;
        let layout = TimeLayout::new(t, t).unwrap();
        let mut rows = Vec::new();
        for (i, (&m1, &m0)) in treated_means.iter().zip(control_means).enumerate() {
            let period = i as u32 + 1;
            for s in [-spread, spread] {
                rows.push(Observation::new(period, true, m1 + s));
                rows.push(Observation::new(period, false, m0 + s));
            }
        }
        Dataset::new(rows, Design::RepeatedCrossSection, layout).unwrap()
    }

    #[test]
    fn hand_example() {
        let data = rcs_from_means(&[3.0, 6.0, 11.0], &[1.0, 2.0, 3.0], 0.5);
        let est = estimate_theta_sample_means(&data).unwrap();
        assert_eq!(est.values(), &[2.0, 4.0]);
        assert_eq!(est.effective_n(), 2);
    }

    #[test]
    fn constant_outcomes_give_zero() {
        let data = rcs_from_means(&[4.2; 4], &[4.2; 4], 0.0);
        let est = estimate_theta_sample_means(&data).unwrap();
        assert!(est.values().iter().all(|&v| v == 0.0));
        assert!(est.covariance().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn treated_level_shift_cancels() {
        let a =
            estimate_theta_sample_means(&rcs_from_means(&[3.0, 6.0, 11.0, 2.0], &[1.0, 2.0, 3.0, 0.0], 0.3)).unwrap();
        let b =
            estimate_theta_sample_means(&rcs_from_means(&[10.0, 13.0, 18.0, 9.0], &[1.0, 2.0, 3.0, 0.0], 0.3)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn plugin_variance_of_iterative_violation() {
        // cells with n = 4 rows and distinct spreads; sigma^2 is the unbiased variance
        let layout = TimeLayout::new(3, 3).unwrap();
        let spreads = |d: bool, t: u32| 0.5 + f64::from(t) * 0.25 + if d { 1.0 } else { 0.0 };
        let mut rows = Vec::new();
        for t in 1..=3 {
            for d in [false, true] {
                let s = spreads(d, t);
                for dev in [-s, -s / 2.0, s / 2.0, s] {
                    rows.push(Observation::new(t, d, 10.0 * f64::from(t) + dev));
                }
            }
        }
        let data = Dataset::new(rows, Design::RepeatedCrossSection, layout).unwrap();
        let cov = plugin_covariance(&data).unwrap();
        let sigma2 = |d: bool, t: u32| {
            let s = spreads(d, t);
            (2.0 * s * s + 2.0 * s * s / 4.0) / 3.0
        };
        let expected = (sigma2(true, 2) + sigma2(true, 1) + sigma2(false, 2) + sigma2(false, 1)) / 4.0;
        assert_relative_eq!(cov[(0, 0)], expected, max_relative = 1e-12);
        // r_2 and dd_3 share the period-2 cells with opposite signs
        let shared = -(sigma2(true, 2) + sigma2(false, 2)) / 4.0;
        assert_relative_eq!(cov[(0, 1)], shared, max_relative = 1e-12);
    }

    #[test]
    fn panel_refuses_plugin() {
        let layout = TimeLayout::new(3, 3).unwrap();
        let mut rows = Vec::new();
        for (u, d) in [("a", false), ("b", false), ("c", true), ("d", true)] {
            for t in 1..=3 {
                rows.push(Observation::new(t, d, f64::from(t)).unit(u));
            }
        }
        let data = Dataset::new(rows, Design::Panel, layout).unwrap();
        assert!(matches!(plugin_covariance(&data), Err(Error::PanelNeedsBootstrap)));
        let est = estimate_theta_sample_means(&data).unwrap();
        assert!(est.covariance().is_none());
    }

    #[test]
    fn weights_are_scale_free() {
        let layout = TimeLayout::new(3, 3).unwrap();
        let mut rows = Vec::new();
        for t in 1..=3u32 {
            for d in [false, true] {
                for (k, w) in [0.5, 1.5, 3.0].into_iter().enumerate() {
                    rows.push(
                        Observation::new(t, d, f64::from(t * 3) + k as f64 * 1.7 + f64::from(u8::from(d))).weight(w),
                    );
                }
            }
        }
        let scaled: Vec<Observation> = rows
            .iter()
            .cloned()
            .map(|o| {
                let w = o.weight;
                o.weight(w * 7.0)
            })
            .collect();
        let a =
            estimate_theta_sample_means(&Dataset::new(rows, Design::RepeatedCrossSection, layout).unwrap()).unwrap();
        let b =
            estimate_theta_sample_means(&Dataset::new(scaled, Design::RepeatedCrossSection, layout).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        for (x, y) in a.covariance().unwrap().iter().zip(b.covariance().unwrap().iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }
}
