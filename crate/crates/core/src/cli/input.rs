//! CSV ingestion for long-format outcome data and covariance matrices.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimators::{Design, Observation};

/// Observations read from a data file.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub observations: Vec<Observation>,
    pub has_unit_ids: bool,
    pub max_time: u32,
}

impl LoadedData {
    /// Panel when some unit id is observed in more than one period.
    pub fn detect_design(&self) -> Design {
        let mut seen: HashMap<&str, u32> = HashMap::new();
        for o in &self.observations {
            if let Some(u) = o.unit_id.as_deref() {
                match seen.get(u) {
                    Some(&t) if t != o.time => return Design::Panel,
                    _ => {
                        seen.insert(u, o.time);
                    }
                }
            }
        }
        Design::RepeatedCrossSection
    }
}

fn line_of(e: &csv::Error) -> String {
    e.position()
        .map_or_else(String::new, |p| format!("line {}: ", p.line()))
}

fn field_error(line: u64, column: &str, expected: &str, got: &str) -> Error {
    Error::InvalidData(format!(
        "line {line}, column '{column}': expected {expected}, got '{got}'"
    ))
}

/// Reads the long-format schema: `time`, `treated` (0/1) and `outcome` are
/// required; `unit_id`, the cluster column and the weight column are
/// optional. Other columns are ignored.
pub fn read_observations(path: &Path, cluster_column: Option<&str>, weight_column: Option<&str>) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidData(format!("{}reading header: {e}", line_of(&e))))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| Error::InvalidData(format!("missing required column '{name}' in header")))
    };
    let time_col = require("time")?;
    let treated_col = require("treated")?;
    let outcome_col = require("outcome")?;
    let unit_col = find("unit_id");
    let optional = |requested: Option<&str>, default: &str| -> Result<Option<usize>> {
        match requested {
            Some(name) => find(name)
                .map(Some)
                .ok_or_else(|| Error::InvalidData(format!("column '{name}' not found in header"))),
            None => Ok(find(default)),
        }
    };
    let cluster_col = optional(cluster_column, "cluster_id")?;
    let weight_col = optional(weight_column, "weight")?;
    let cluster_name = cluster_col.map(|i| headers[i].to_string());
    let weight_name = weight_col.map(|i| headers[i].to_string());

    let mut observations = Vec::new();
    let mut max_time = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::InvalidData(format!("{}malformed row: {e}", line_of(&e))))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize| record.get(i).unwrap_or("");

        let raw = get(time_col);
        let time: u32 = raw
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| field_error(line, "time", "a positive integer", raw))?;
        let raw = get(treated_col);
        let treated = match raw {
            "0" => false,
            "1" => true,
            _ => return Err(field_error(line, "treated", "0 or 1", raw)),
        };
        let raw = get(outcome_col);
        let outcome: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| field_error(line, "outcome", "a finite number", raw))?;

        let mut obs = Observation::new(time, treated, outcome);
        if let Some(i) = unit_col {
            let id = get(i);
            if !id.is_empty() {
                obs = obs.unit(id);
            }
        }
        if let (Some(i), Some(name)) = (cluster_col, &cluster_name) {
            let id = get(i);
            if id.is_empty() {
                return Err(field_error(line, name, "a cluster identifier", id));
            }
            obs = obs.cluster(id);
        }
        if let (Some(i), Some(name)) = (weight_col, &weight_name) {
            let raw = get(i);
            let w: f64 = raw
                .parse()
                .ok()
                .filter(|w: &f64| w.is_finite() && *w > 0.0)
                .ok_or_else(|| field_error(line, name, "a positive number", raw))?;
            obs = obs.weight(w);
        }
        max_time = max_time.max(time);
        observations.push(obs);
    }
    if observations.is_empty() {
        return Err(Error::Empty("data file has no rows"));
    }
    let has_unit_ids = observations.iter().any(|o| o.unit_id.is_some());
    Ok(LoadedData {
        observations,
        has_unit_ids,
        max_time,
    })
}

/// Reads a square numeric matrix. A first row that does not parse as
/// numbers is treated as a header.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidData(format!("cannot open {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidData(format!("{}malformed row: {e}", line_of(&e))))?;
        let line = record.position().map_or(0, |p| p.line());
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => {
                let bad = record.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or("");
                return Err(Error::InvalidData(format!(
                    "line {line}: expected a number, got '{bad}'"
                )));
            }
        }
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Empty("matrix file has no numeric rows"));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::InvalidData(format!(
            "matrix must be square: {n} rows but a row has {} entries",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Parses a comma-separated list of numbers.
pub fn parse_number_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("cannot parse '{}' as a number", v.trim())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_schema_and_detects_design() {
        let f = file("unit_id,time,treated,outcome\na,1,0,1.5\na,2,0,2.5\nb,1,1,0.5\nb,2,1,1\n");
        let d = read_observations(f.path(), None, None).unwrap();
        assert_eq!(d.observations.len(), 4);
        assert_eq!(d.max_time, 2);
        assert_eq!(d.detect_design(), Design::Panel);
        let f = file("time,treated,outcome,w\n1,0,1.5,2\n2,1,3,1\n");
        let d = read_observations(f.path(), None, Some("w")).unwrap();
        assert_eq!(d.observations[0].weight, 2.0);
        assert_eq!(d.detect_design(), Design::RepeatedCrossSection);
    }

    #[test]
    fn errors_name_line_and_column() {
        let f = file("time,treated,outcome\n1,0,1.5\n2,1,abc\n");
        let err = read_observations(f.path(), None, None).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("outcome"), "{err}");
        let f = file("time,treated,outcome\n1,2,1.5\n");
        let err = read_observations(f.path(), None, None).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("treated"), "{err}");
        let f = file("time,treated,outcome\n1,0,1.5\n1,0\n");
        let err = read_observations(f.path(), None, None).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let f = file("time,outcome\n1,1.5\n");
        assert!(read_observations(f.path(), None, None).is_err());
    }

    #[test]
    fn matrix_with_and_without_header() {
        let a = read_matrix(file("1,0\n0,2\n").path()).unwrap();
        let b = read_matrix(file("x,y\n1,0\n0,2\n").path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[(1, 1)], 2.0);
        assert!(read_matrix(file("1,0,0\n0,2,0\n").path()).is_err());
    }
}
