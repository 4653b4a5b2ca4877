use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::TimeLayout;
use crate::error::{Error, Result};

/// Minimum number of rows per (group, period) cell.
pub const MIN_CELL_ROWS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// The same units observed in every period.
    Panel,
    /// Independent samples drawn each period.
    RepeatedCrossSection,
}

/// One long-format record.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit_id: Option<String>,
    pub time: u32,
    pub treated: bool,
    pub outcome: f64,
    pub cluster_id: Option<String>,
    pub weight: f64,
}

impl Observation {
    pub fn new(time: u32, treated: bool, outcome: f64) -> Self {
        Observation {
            unit_id: None,
            time,
            treated,
            outcome,
            cluster_id: None,
            weight: 1.0,
        }
    }

    pub fn unit(mut self, id: impl Into<String>) -> Self {
        self.unit_id = Some(id.into());
        self
    }

    pub fn cluster(mut self, id: impl Into<String>) -> Self {
        self.cluster_id = Some(id.into());
        self
    }

    pub fn weight(mut self, w: f64) -> Self {
        self.weight = w;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Row {
    pub unit: Option<u32>,
    pub cluster: Option<u32>,
    pub time: u32,
    pub treated: bool,
    pub outcome: f64,
    pub weight: f64,
}

/// Validated long-format data with interned unit and cluster identifiers.
#[derive(Debug, Clone)]
pub struct Dataset {
    design: Design,
    layout: TimeLayout,
    pub(crate) rows: Vec<Row>,
    n_units: usize,
    n_clusters: usize,
    cell_counts: Vec<usize>,
}

fn intern(map: &mut HashMap<String, u32>, key: &str) -> u32 {
    let next = map.len() as u32;
    *map.entry(key.to_owned()).or_insert(next)
}

pub(crate) fn cell_index(layout: TimeLayout, treated: bool, time: u32) -> usize {
    usize::from(treated) * layout.total_periods() as usize + (time - 1) as usize
}

impl Dataset {
    pub fn new(observations: Vec<Observation>, design: Design, layout: TimeLayout) -> Result<Self> {
        let t_max = layout.total_periods();
        let mut units = HashMap::new();
        let mut clusters = HashMap::new();
        let mut rows = Vec::with_capacity(observations.len());
        for (i, o) in observations.iter().enumerate() {
            if o.time < 1 || o.time > t_max {
                return Err(Error::InvalidData(format!(
                    "row {}: time {} outside 1..={t_max}",
                    i + 1,
                    o.time
                )));
            }
            if !o.outcome.is_finite() {
                return Err(Error::InvalidData(format!("row {}: outcome is not finite", i + 1)));
            }
            if o.weight <= 0.0 || !o.weight.is_finite() {
                return Err(Error::InvalidData(format!(
                    "row {}: weight {} must be positive and finite",
                    i + 1,
                    o.weight
                )));
            }
            rows.push(Row {
                unit: o.unit_id.as_deref().map(|u| intern(&mut units, u)),
                cluster: o.cluster_id.as_deref().map(|c| intern(&mut clusters, c)),
                time: o.time,
                treated: o.treated,
                outcome: o.outcome,
                weight: o.weight,
            });
        }
        let data = Dataset::from_rows(design, layout, rows, units.len(), clusters.len());

        for treated in [false, true] {
            for period in 1..=t_max {
                let count = data.cell_count(treated, period);
                if count < MIN_CELL_ROWS {
                    return Err(Error::SparseCell {
                        treated,
                        period,
                        count,
                        required: MIN_CELL_ROWS,
                    });
                }
            }
        }
        if design == Design::Panel {
            data.check_panel()?;
        }
        Ok(data)
    }

    /// Assembles a dataset without the cell-size and panel checks; used for
    /// bootstrap resamples whose structure is known by construction.
    pub(crate) fn from_rows(
        design: Design,
        layout: TimeLayout,
        rows: Vec<Row>,
        n_units: usize,
        n_clusters: usize,
    ) -> Self {
        let mut cell_counts = vec![0usize; 2 * layout.total_periods() as usize];
        for r in &rows {
            cell_counts[cell_index(layout, r.treated, r.time)] += 1;
        }
        Dataset {
            design,
            layout,
            rows,
            n_units,
            n_clusters,
            cell_counts,
        }
    }

    fn check_panel(&self) -> Result<()> {
        let t = self.layout.total_periods() as usize;
        let mut seen: Vec<Option<(bool, Vec<bool>)>> = vec![None; self.n_units];
        for (i, r) in self.rows.iter().enumerate() {
            let u = r.unit.ok_or_else(|| {
                Error::InvalidData(format!("row {}: panel data requires a unit_id on every row", i + 1))
            })? as usize;
            let entry = seen[u].get_or_insert_with(|| (r.treated, vec![false; t]));
            if entry.0 != r.treated {
                return Err(Error::InvalidData(format!(
                    "row {}: treatment status of a panel unit changes over time",
                    i + 1
                )));
            }
            let slot = &mut entry.1[(r.time - 1) as usize];
            if *slot {
                return Err(Error::InvalidData(format!(
                    "row {}: panel unit observed twice in period {}",
                    i + 1,
                    r.time
                )));
            }
            *slot = true;
        }
        if seen.iter().flatten().any(|(_, periods)| periods.iter().any(|p| !p)) {
            return Err(Error::InvalidData(
                "unbalanced panel: some unit is missing at least one period".into(),
            ));
        }
        Ok(())
    }

    pub fn design(&self) -> Design {
        self.design
    }

    pub fn layout(&self) -> TimeLayout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn cell_count(&self, treated: bool, time: u32) -> usize {
        self.cell_counts[cell_index(self.layout, treated, time)]
    }

    pub(crate) fn cell_counts(&self) -> &[usize] {
        &self.cell_counts
    }

    pub fn min_cell_count(&self) -> usize {
        self.cell_counts.iter().copied().min().unwrap_or(0)
    }

    pub fn is_unweighted(&self) -> bool {
        self.rows.iter().all(|r| r.weight == 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> TimeLayout {
        TimeLayout::new(3, 3).unwrap()
    }

    fn rcs_rows() -> Vec<Observation> {
        let mut v = Vec::new();
        for t in 1..=3 {
            for d in [false, true] {
                v.push(Observation::new(t, d, 1.0));
                v.push(Observation::new(t, d, 2.0));
            }
        }
        v
    }

    #[test]
    fn sparse_cell_is_named() {
        let mut rows = rcs_rows();
        rows.retain(|o| !(o.time == 2 && o.treated && o.outcome == 2.0));
        match Dataset::new(rows, Design::RepeatedCrossSection, layout()) {
            Err(Error::SparseCell {
                treated, period, count, ..
            }) => {
                assert!(treated);
                assert_eq!((period, count), (2, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let mut rows = rcs_rows();
        rows[0].time = 4;
        assert!(Dataset::new(rows, Design::RepeatedCrossSection, layout()).is_err());
        let mut rows = rcs_rows();
        rows[1].weight = 0.0;
        assert!(Dataset::new(rows, Design::RepeatedCrossSection, layout()).is_err());
        let mut rows = rcs_rows();
        rows[2].outcome = f64::NAN;
        assert!(Dataset::new(rows, Design::RepeatedCrossSection, layout()).is_err());
    }

    #[test]
    fn panel_structure_checks() {
        let mk = |unit: &str, t: u32, d: bool| Observation::new(t, d, 0.0).unit(unit);
        let mut rows = Vec::new();
        for (u, d) in [("a", false), ("b", false), ("c", true), ("d", true)] {
            for t in 1..=3 {
                rows.push(mk(u, t, d));
            }
        }
        assert!(Dataset::new(rows.clone(), Design::Panel, layout()).is_ok());

        let mut dup = rows.clone();
        dup[1].time = 1;
        dup.push(mk("a", 2, false));
        assert!(Dataset::new(dup, Design::Panel, layout()).is_err());

        let mut switch = rows.clone();
        switch[2].treated = true;
        switch.push(mk("z", 1, true));
        switch.push(mk("z", 2, true));
        assert!(Dataset::new(switch, Design::Panel, layout()).is_err());

        let mut no_id = rows;
        no_id[0].unit_id = None;
        assert!(Dataset::new(no_id, Design::Panel, layout()).is_err());
    }
}
