//! Block bootstrap for the covariance of the estimate vector.
//!
//! Resampling blocks are whole clusters, whole units, or single rows.
//! Replicate `i` draws from ChaCha stream `i` under the configured seed, so
//! results do not depend on the number of worker threads.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Design, Row};
use super::means::point_sample_means;
use super::twfe::point_twfe;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Smallest replication count accepted for covariance output.
pub const MIN_REPLICATIONS: usize = 100;
/// Below this many replications a warning is logged.
pub const RECOMMENDED_REPLICATIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleLevel {
    Cluster,
    Unit,
    Row,
}

impl std::str::FromStr for ResampleLevel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cluster" => Ok(ResampleLevel::Cluster),
            "unit" => Ok(ResampleLevel::Unit),
            "row" => Ok(ResampleLevel::Row),
            other => Err(Error::InvalidParameter(format!("unknown resample level '{other}'"))),
        }
    }
}

/// Which point estimator each resample re-runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointEstimator {
    #[default]
    Means,
    Twfe,
}

impl PointEstimator {
    pub(crate) fn point(self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            PointEstimator::Means => Ok(point_sample_means(data)),
            PointEstimator::Twfe => point_twfe(data),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub resample_level: ResampleLevel,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replications: 1000,
            resample_level: ResampleLevel::Unit,
            seed: 0,
        }
    }
}

/// Bootstrap replicates of the estimate vector, in replicate order.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub draws: Vec<Vec<f64>>,
    /// Total resamples drawn, including redraws after empty cells.
    pub attempts: usize,
}

impl BootstrapDraws {
    /// Empirical covariance with divisor `B - 1`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let b = self.draws.len();
        let k = self.draws.first().map_or(0, |d| d.len());
        let mut mean = vec![0.0; k];
        for d in &self.draws {
            for (m, v) in mean.iter_mut().zip(d) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut cov = DMatrix::zeros(k, k);
        for d in &self.draws {
            for i in 0..k {
                let di = d[i] - mean[i];
                for j in 0..=i {
                    cov[(i, j)] += di * (d[j] - mean[j]);
                }
            }
        }
        let denom = (b as f64 - 1.0).max(1.0);
        for i in 0..k {
            for j in 0..=i {
                cov[(i, j)] /= denom;
                cov[(j, i)] = cov[(i, j)];
            }
        }
        cov
    }

    /// Standard deviation of a scalar functional across replicates.
    pub fn std_of(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let vals: Vec<f64> = self.draws.iter().map(|d| f(d)).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }
}

/// A resampling block: row indices plus each row's unit position within
/// the block (for relabeling panel units drawn more than once).
struct Block {
    rows: Vec<usize>,
    local_unit: Vec<u32>,
    n_local_units: u32,
}

fn make_blocks(data: &Dataset, level: ResampleLevel) -> Result<Vec<Block>> {
    let mut keyed: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    match level {
        ResampleLevel::Cluster => {
            for (i, r) in data.rows.iter().enumerate() {
                let c = r.cluster.ok_or_else(|| {
                    Error::InvalidData(format!(
                        "row {}: cluster resampling needs a cluster_id on every row",
                        i + 1
                    ))
                })?;
                keyed.entry(c).or_default().push(i);
            }
            if data.design() == Design::Panel {
                let mut unit_cluster: BTreeMap<u32, u32> = BTreeMap::new();
                for r in &data.rows {
                    let u = r.unit.unwrap_or_default();
                    let c = r.cluster.unwrap_or_default();
                    if *unit_cluster.entry(u).or_insert(c) != c {
                        return Err(Error::InvalidData(
                            "a panel unit appears in more than one cluster".into(),
                        ));
                    }
                }
            }
        }
        ResampleLevel::Unit => {
            let all_ids = data.rows.iter().all(|r| r.unit.is_some());
            if data.design() == Design::Panel || all_ids {
                for (i, r) in data.rows.iter().enumerate() {
                    let u = r
                        .unit
                        .ok_or_else(|| Error::InvalidData(format!("row {}: unit resampling needs a unit_id", i + 1)))?;
                    keyed.entry(u).or_default().push(i);
                }
            } else {
                keyed = (0..data.rows.len()).map(|i| (i as u32, vec![i])).collect();
            }
        }
        ResampleLevel::Row => {
            if data.design() == Design::Panel {
                return Err(Error::Unsupported(
                    "row resampling would break the panel structure; resample units or clusters".into(),
                ));
            }
            keyed = (0..data.rows.len()).map(|i| (i as u32, vec![i])).collect();
        }
    }
    if keyed.len() < 2 {
        return Err(Error::Bootstrap(format!(
            "need at least 2 resampling blocks, found {}",
            keyed.len()
        )));
    }
    Ok(keyed
        .into_values()
        .map(|rows| {
            let mut ids: BTreeMap<u32, u32> = BTreeMap::new();
            let local_unit = rows
                .iter()
                .map(|&i| {
                    let u = data.rows[i].unit.unwrap_or(i as u32);
                    let next = ids.len() as u32;
                    *ids.entry(u).or_insert(next)
                })
                .collect();
            Block {
                rows,
                local_unit,
                n_local_units: ids.len() as u32,
            }
        })
        .collect())
}

fn resample(data: &Dataset, blocks: &[Block], picks: &[usize]) -> Dataset {
    let mut rows = Vec::with_capacity(data.len());
    let mut next_unit = 0u32;
    for &b in picks {
        let block = &blocks[b];
        for (&i, &lu) in block.rows.iter().zip(&block.local_unit) {
            let r = data.rows[i];
            rows.push(Row {
                unit: Some(next_unit + lu),
                ..r
            });
        }
        next_unit += block.n_local_units;
    }
    Dataset::from_rows(
        data.design(),
        data.layout(),
        rows,
        next_unit as usize,
        data.n_clusters(),
    )
}

/// Draws `B` bootstrap replicates of the estimate vector. Resamples with an
/// empty (group, period) cell are redrawn, up to `100 * B` attempts in total.
pub fn bootstrap_draws(data: &Dataset, estimator: PointEstimator, cfg: &BootstrapConfig) -> Result<BootstrapDraws> {
    if cfg.replications < MIN_REPLICATIONS {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least {MIN_REPLICATIONS} replications, got {}",
            cfg.replications
        )));
    }
    if cfg.replications < RECOMMENDED_REPLICATIONS {
        log::warn!(
            "{} bootstrap replications is low for covariance estimation (recommended >= {RECOMMENDED_REPLICATIONS})",
            cfg.replications
        );
    }
    let blocks = make_blocks(data, cfg.resample_level)?;
    let max_attempts = 100 * cfg.replications;
    let n_blocks = blocks.len();

    let results: Vec<Result<(Vec<f64>, usize)>> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, i as u64);
            let mut picks = vec![0usize; n_blocks];
            for attempt in 1..=max_attempts {
                picks.iter_mut().for_each(|p| *p = rng.random_range(0..n_blocks));
                let sample = resample(data, &blocks, &picks);
                if sample.cell_counts().iter().all(|&c| c > 0) {
                    return Ok((estimator.point(&sample)?, attempt));
                }
            }
            Err(Error::Bootstrap(format!(
                "replicate {i} kept producing empty cells after {max_attempts} attempts"
            )))
        })
        .collect();

    let mut draws = Vec::with_capacity(cfg.replications);
    let mut attempts = 0usize;
    for r in results {
        let (d, a) = r?;
        attempts += a;
        draws.push(d);
    }
    if attempts > max_attempts {
        return Err(Error::Bootstrap(format!(
            "{attempts} resamples needed (limit {max_attempts}); cells are too sparse for this resampling level"
        )));
    }
    Ok(BootstrapDraws { draws, attempts })
}

/// Bootstrap covariance of the estimate vector.
pub fn estimate_covariance_bootstrap(
    data: &Dataset,
    estimator: PointEstimator,
    cfg: &BootstrapConfig,
) -> Result<DMatrix<f64>> {
    Ok(bootstrap_draws(data, estimator, cfg)?.covariance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TimeLayout;
    use crate::estimators::dataset::Observation;

    fn clustered_rcs() -> Dataset {
        let layout = TimeLayout::new(3, 3).unwrap();
        let mut rows = Vec::new();
        for c in 0..8 {
            for t in 1..=3u32 {
                for d in [false, true] {
                    for k in 0..3 {
                        let y = f64::from(t) + (c * 7 + k) as f64 % 3.0 * 0.4 + f64::from(u8::from(d));
                        rows.push(Observation::new(t, d, y).cluster(format!("c{c}")));
                    }
                }
            }
        }
        Dataset::new(rows, Design::RepeatedCrossSection, layout).unwrap()
    }

    #[test]
    fn needs_two_clusters() {
        let layout = TimeLayout::new(3, 3).unwrap();
        let mut rows = Vec::new();
        for t in 1..=3 {
            for d in [false, true] {
                rows.push(Observation::new(t, d, 1.0).cluster("only"));
                rows.push(Observation::new(t, d, 2.0).cluster("only"));
            }
        }
        let data = Dataset::new(rows, Design::RepeatedCrossSection, layout).unwrap();
        let cfg = BootstrapConfig {
            replications: 100,
            resample_level: ResampleLevel::Cluster,
            seed: 1,
        };
        assert!(matches!(
            estimate_covariance_bootstrap(&data, PointEstimator::Means, &cfg),
            Err(Error::Bootstrap(_))
        ));
    }

    #[test]
    fn too_few_replications() {
        let cfg = BootstrapConfig {
            replications: 50,
            ..Default::default()
        };
        assert!(estimate_covariance_bootstrap(&clustered_rcs(), PointEstimator::Means, &cfg).is_err());
    }

    #[test]
    fn degenerate_panel_has_zero_covariance() {
        // identical units within each group: every resample has the same cell means
        let layout = TimeLayout::new(4, 3).unwrap();
        let mut rows = Vec::new();
        for d in [false, true] {
            for i in 0..5 {
                for t in 1..=4u32 {
                    let y = f64::from(t * t) * 0.5 + if d { 2.0 } else { 0.0 };
                    rows.push(
                        Observation::new(t, d, y)
                            .unit(format!("{d}{i}"))
                            .cluster(format!("{d}{}", i % 3)),
                    );
                }
            }
        }
        let data = Dataset::new(rows, Design::Panel, layout).unwrap();
        for level in [ResampleLevel::Unit, ResampleLevel::Cluster] {
            for est in [PointEstimator::Means, PointEstimator::Twfe] {
                let cfg = BootstrapConfig {
                    replications: 200,
                    resample_level: level,
                    seed: 3,
                };
                let cov = estimate_covariance_bootstrap(&data, est, &cfg).unwrap();
                assert!(cov.iter().all(|v| v.abs() <= 1e-12), "{level:?} {est:?}: {cov}");
            }
        }
    }

    #[test]
    fn row_level_refused_for_panel() {
        let layout = TimeLayout::new(3, 3).unwrap();
        let mut rows = Vec::new();
        for (u, d) in [("a", false), ("b", false), ("c", true), ("d", true)] {
            for t in 1..=3 {
                rows.push(Observation::new(t, d, 0.0).unit(u));
            }
        }
        let data = Dataset::new(rows, Design::Panel, layout).unwrap();
        let cfg = BootstrapConfig {
            replications: 100,
            resample_level: ResampleLevel::Row,
            seed: 0,
        };
        assert!(matches!(
            estimate_covariance_bootstrap(&data, PointEstimator::Means, &cfg),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let data = clustered_rcs();
        let cfg = BootstrapConfig {
            replications: 300,
            resample_level: ResampleLevel::Cluster,
            seed: 42,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_covariance_bootstrap(&data, PointEstimator::Means, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.as_slice(), b.as_slice());
        assert!(a[(0, 0)] > 0.0);
    }
}
