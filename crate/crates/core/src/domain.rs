//! Domain types shared by every stage of the analysis: the time layout,
//! norm orders, severity parameters, and the estimate vector with its
//! covariance.
//!
//! The estimate vector stacks the `T_pre - 1` estimated iterative
//! violations `r_2 .. r_{t0-1}` followed by the `T_post` estimated
//! difference-in-differences `dd_{t0} .. dd_T`, all relative to the last
//! pre-treatment period `t0 - 1`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for accepting a covariance matrix as PSD.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Symmetry tolerance, relative to `max(1, max |entry|)`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Period indexing: periods `1..=T`, first treated period `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LayoutRepr", into = "LayoutRepr")]
pub struct TimeLayout {
    total_periods: u32,
    treatment_time: u32,
}

#[derive(Serialize, Deserialize)]
struct LayoutRepr {
    total_periods: u32,
    treatment_time: u32,
}

impl TryFrom<LayoutRepr> for TimeLayout {
    type Error = Error;
    fn try_from(r: LayoutRepr) -> Result<Self> {
        TimeLayout::new(r.total_periods, r.treatment_time)
    }
}

impl From<TimeLayout> for LayoutRepr {
    fn from(l: TimeLayout) -> Self {
        LayoutRepr {
            total_periods: l.total_periods,
            treatment_time: l.treatment_time,
        }
    }
}

impl TimeLayout {
    /// `t0` must lie in `[3, T]` so that at least two pre-treatment
    /// periods and one post-treatment period exist.
    pub fn new(total_periods: u32, treatment_time: u32) -> Result<Self> {
        if treatment_time < 3 {
            return Err(Error::InvalidLayout(format!(
                "treatment time t0 = {treatment_time} leaves fewer than 2 pre-treatment periods"
            )));
        }
        if treatment_time > total_periods {
            return Err(Error::InvalidLayout(format!(
                "treatment time t0 = {treatment_time} exceeds the number of periods T = {total_periods}"
            )));
        }
        Ok(TimeLayout {
            total_periods,
            treatment_time,
        })
    }

    /// Builds a layout from the pre- and post-treatment lengths.
    pub fn from_lengths(pre_length: u32, post_length: u32) -> Result<Self> {
        if post_length == 0 {
            return Err(Error::InvalidLayout("post-treatment length must be at least 1".into()));
        }
        Self::new(pre_length + post_length, pre_length + 1)
    }

    pub fn total_periods(&self) -> u32 {
        self.total_periods
    }

    pub fn treatment_time(&self) -> u32 {
        self.treatment_time
    }

    pub fn pre_length(&self) -> usize {
        (self.treatment_time - 1) as usize
    }

    pub fn post_length(&self) -> usize {
        (self.total_periods - self.treatment_time + 1) as usize
    }

    /// Number of pre-treatment violation terms, `T_pre - 1`.
    pub fn pre_block_len(&self) -> usize {
        self.pre_length() - 1
    }

    pub fn theta_length(&self) -> usize {
        self.pre_block_len() + self.post_length()
    }
}

/// Order `p` of the power mean used as a severity measure. `p = inf` is a
/// first-class value and is evaluated as an exact maximum.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NormOrder(f64);

impl NormOrder {
    pub const ONE: NormOrder = NormOrder(1.0);
    pub const TWO: NormOrder = NormOrder(2.0);
    pub const INFINITY: NormOrder = NormOrder(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidParameter(format!("norm order p must be >= 1, got {p}")));
        }
        Ok(NormOrder(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// Hölder conjugate `q` with `1/p + 1/q = 1`.
    pub fn conjugate(self) -> NormOrder {
        if self.0 == 1.0 {
            NormOrder::INFINITY
        } else if self.0.is_infinite() {
            NormOrder::ONE
        } else {
            NormOrder(self.0 / (self.0 - 1.0))
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for NormOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" | "∞" => Ok(NormOrder::INFINITY),
            _ => {
                let p: f64 = t
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("cannot parse norm order '{s}'")))?;
                NormOrder::new(p)
            }
        }
    }
}

impl Serialize for NormOrder {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = NormOrder;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number >= 1 or the string \"inf\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<NormOrder, E> {
                NormOrder::new(v).map_err(E::custom)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<NormOrder, E> {
                self.visit_f64(v as f64)
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<NormOrder, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<NormOrder, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

/// Which notion of parallel-trends violation the severity is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationMode {
    /// Successive-period violations `r_t`.
    #[default]
    Iterative,
    /// Cumulative violations `Delta_t = sum_{s <= t} r_s`.
    Overall,
}

impl FromStr for ViolationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iterative" => Ok(ViolationMode::Iterative),
            "overall" => Ok(ViolationMode::Overall),
            other => Err(Error::InvalidParameter(format!(
                "unknown violation mode '{other}' (expected iterative or overall)"
            ))),
        }
    }
}

impl fmt::Display for ViolationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationMode::Iterative => f.write_str("iterative"),
            ViolationMode::Overall => f.write_str("overall"),
        }
    }
}

/// Norm order, acceptable threshold `M`, and violation mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityParams {
    pub p: NormOrder,
    pub threshold_m: f64,
    pub mode: ViolationMode,
}

impl SeverityParams {
    pub fn new(p: NormOrder, threshold_m: f64, mode: ViolationMode) -> Result<Self> {
        let params = SeverityParams { p, threshold_m, mode };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold_m < 0.0 || !self.threshold_m.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "threshold M must be a finite nonnegative number, got {}",
                self.threshold_m
            )));
        }
        NormOrder::new(self.p.value()).map(|_| ())
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Cumulative sums of iterative violations (`r_1 = 0`).
pub fn iterative_to_overall(r: &[f64]) -> Result<Vec<f64>> {
    check_finite(r, "iterative violations")?;
    let mut acc = 0.0;
    Ok(r.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect())
}

/// First differences of overall violations; inverse of [`iterative_to_overall`].
pub fn overall_to_iterative(delta: &[f64]) -> Result<Vec<f64>> {
    check_finite(delta, "overall violations")?;
    let mut prev = 0.0;
    Ok(delta
        .iter()
        .map(|&d| {
            let r = d - prev;
            prev = d;
            r
        })
        .collect())
}

/// Estimated violation/DID vector with its finite-sample covariance.
///
/// The covariance is that of the estimator itself (not of its
/// `sqrt(n)`-scaled error).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    layout: TimeLayout,
    values: Vec<f64>,
    covariance: Option<DMatrix<f64>>,
    effective_n: usize,
    mode: ViolationMode,
}

impl ThetaEstimate {
    /// Validates dimensions, finiteness, and (if present) symmetry and
    /// positive semidefiniteness of the covariance. The stored covariance
    /// is exactly symmetrized.
    pub fn new(
        layout: TimeLayout,
        values: Vec<f64>,
        covariance: Option<DMatrix<f64>>,
        effective_n: usize,
    ) -> Result<Self> {
        Self::with_mode(layout, values, covariance, effective_n, ViolationMode::Iterative)
    }

    pub(crate) fn with_mode(
        layout: TimeLayout,
        values: Vec<f64>,
        covariance: Option<DMatrix<f64>>,
        effective_n: usize,
        mode: ViolationMode,
    ) -> Result<Self> {
        let k = layout.theta_length();
        if values.len() != k {
            return Err(Error::DimensionMismatch {
                context: "estimate vector",
                expected: k,
                actual: values.len(),
            });
        }
        check_finite(&values, "estimate vector")?;
        let covariance = match covariance {
            Some(c) => {
                if c.nrows() != k || c.ncols() != k {
                    return Err(Error::DimensionMismatch {
                        context: "covariance matrix",
                        expected: k,
                        actual: c.nrows().max(c.ncols()),
                    });
                }
                Some(validate_covariance(&c)?)
            }
            None => None,
        };
        Ok(ThetaEstimate {
            layout,
            values,
            covariance,
            effective_n,
            mode,
        })
    }

    pub fn layout(&self) -> TimeLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pre_block(&self) -> &[f64] {
        &self.values[..self.layout.pre_block_len()]
    }

    pub fn post_block(&self) -> &[f64] {
        &self.values[self.layout.pre_block_len()..]
    }

    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.covariance.as_ref()
    }

    pub fn effective_n(&self) -> usize {
        self.effective_n
    }

    pub fn mode(&self) -> ViolationMode {
        self.mode
    }

    /// Replaces the covariance (e.g. with a bootstrap estimate).
    pub fn with_covariance(self, covariance: DMatrix<f64>) -> Result<Self> {
        Self::with_mode(self.layout, self.values, Some(covariance), self.effective_n, self.mode)
    }

    /// Re-expresses the pre-block as overall violations; the covariance is
    /// mapped through the same linear transform.
    pub fn to_overall(&self) -> Result<Self> {
        transform_theta_to_overall(self)
    }
}

/// Replaces the pre-block by its cumulative sums and the covariance by
/// `L * Sigma * L^T`, where `L` is lower-triangular ones on the pre-block
/// and the identity on the post-block.
pub fn transform_theta_to_overall(est: &ThetaEstimate) -> Result<ThetaEstimate> {
    if est.mode != ViolationMode::Iterative {
        return Err(Error::InvalidParameter(
            "estimate is already expressed in overall violations".into(),
        ));
    }
    let layout = est.layout;
    let k = layout.theta_length();
    let m = layout.pre_block_len();
    let mut values = iterative_to_overall(est.pre_block())?;
    values.extend_from_slice(est.post_block());

    let covariance = est.covariance.as_ref().map(|c| {
        let l = DMatrix::from_fn(k, k, |i, j| {
            if i < m && j < m {
                if j <= i {
                    1.0
                } else {
                    0.0
                }
            } else if i == j {
                1.0
            } else {
                0.0
            }
        });
        &l * c * l.transpose()
    });
    ThetaEstimate::with_mode(layout, values, covariance, est.effective_n, ViolationMode::Overall)
}

/// Checks symmetry and PSD-ness; returns the exactly symmetrized matrix.
pub fn validate_covariance(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if c.nrows() != c.ncols() {
        return Err(Error::DimensionMismatch {
            context: "covariance must be square",
            expected: c.nrows(),
            actual: c.ncols(),
        });
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance matrix"));
    }
    let scale = c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let asym = c
        .iter()
        .zip(c.transpose().iter())
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (c + c.transpose()) * 0.5;
    if sym.nrows() > 0 {
        let eig = sym.clone().symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min();
        if min < -PSD_TOLERANCE * max.max(0.0) {
            return Err(Error::NotPositiveSemidefinite { min, max });
        }
    }
    Ok(sym)
}

#[derive(Serialize, Deserialize)]
struct ThetaRepr {
    layout: TimeLayout,
    mode: ViolationMode,
    values: Vec<f64>,
    covariance: Option<Vec<Vec<f64>>>,
    effective_n: usize,
}

impl Serialize for ThetaEstimate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ThetaRepr {
            layout: self.layout,
            mode: self.mode,
            values: self.values.clone(),
            covariance: self.covariance.as_ref().map(matrix_rows),
            effective_n: self.effective_n,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ThetaEstimate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ThetaRepr::deserialize(d)?;
        let cov = match r.covariance {
            Some(rows) => Some(matrix_from_rows(&rows).map_err(serde::de::Error::custom)?),
            None => None,
        };
        ThetaEstimate::with_mode(r.layout, r.values, cov, r.effective_n, r.mode).map_err(serde::de::Error::custom)
    }
}

/// Row-major nested vectors.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    if let Some(bad) = rows.iter().find(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            context: "matrix row",
            expected: k,
            actual: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(n, k, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_sum_examples() {
        assert_eq!(iterative_to_overall(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 3.0, 6.0]);
        assert_eq!(iterative_to_overall(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(iterative_to_overall(&[0.5, -0.5, 0.25]).unwrap(), vec![0.5, 0.0, 0.25]);
        assert!(iterative_to_overall(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn differencing_examples() {
        assert_eq!(overall_to_iterative(&[1.0, 3.0, 6.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(overall_to_iterative(&[-4.5]).unwrap(), vec![-4.5]);
        assert_eq!(overall_to_iterative(&[0.5, 0.0, 0.25]).unwrap(), vec![0.5, -0.5, 0.25]);
        assert!(overall_to_iterative(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn layout_bounds() {
        assert!(TimeLayout::new(5, 2).is_err());
        assert!(TimeLayout::new(5, 6).is_err());
        let l = TimeLayout::new(5, 5).unwrap();
        assert_eq!((l.pre_length(), l.post_length(), l.theta_length()), (4, 1, 4));
        let l = TimeLayout::from_lengths(3, 1).unwrap();
        assert_eq!((l.total_periods(), l.treatment_time()), (4, 4));
    }

    #[test]
    fn theta_length_arithmetic() {
        for t in 3..40u32 {
            for t0 in 3..=t {
                let l = TimeLayout::new(t, t0).unwrap();
                assert_eq!(l.pre_block_len() + l.post_length(), (t - 1) as usize);
                assert_eq!(l.pre_length() + l.post_length(), t as usize);
            }
        }
    }

    #[test]
    fn overall_transform_identity_covariance() {
        let layout = TimeLayout::new(4, 4).unwrap();
        let est = ThetaEstimate::new(layout, vec![1.0, 2.0, 5.0], Some(DMatrix::identity(3, 3)), 10).unwrap();
        let o = transform_theta_to_overall(&est).unwrap();
        assert_eq!(o.values(), &[1.0, 3.0, 5.0]);
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(o.covariance().unwrap(), &expected);
        assert_eq!(o.mode(), ViolationMode::Overall);
        assert!(transform_theta_to_overall(&o).is_err());
    }

    #[test]
    fn overall_transform_zero_and_single_pre() {
        let layout = TimeLayout::new(4, 4).unwrap();
        let est = ThetaEstimate::new(layout, vec![1.0, 2.0, 5.0], Some(DMatrix::zeros(3, 3)), 1).unwrap();
        let o = est.to_overall().unwrap();
        assert!(o.covariance().unwrap().iter().all(|&v| v == 0.0));

        let layout = TimeLayout::new(4, 3).unwrap();
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let est = ThetaEstimate::new(layout, vec![0.7, 1.0, 2.0], Some(cov.clone()), 1).unwrap();
        let o = est.to_overall().unwrap();
        assert_eq!(o.values(), est.values());
        assert_eq!(o.covariance().unwrap(), &cov);
    }

    #[test]
    fn covariance_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(validate_covariance(&asym), Err(Error::NotSymmetric(_))));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            validate_covariance(&indefinite),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        // tiny negative eigenvalue within tolerance is accepted
        let nearly = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 - 1e-12]);
        assert!(validate_covariance(&nearly).is_ok());
    }

    #[test]
    fn norm_order_parsing_and_conjugates() {
        assert!("inf".parse::<NormOrder>().unwrap().is_infinite());
        assert_eq!("2".parse::<NormOrder>().unwrap(), NormOrder::TWO);
        assert!("0.5".parse::<NormOrder>().is_err());
        assert!(NormOrder::ONE.conjugate().is_infinite());
        assert_eq!(NormOrder::INFINITY.conjugate(), NormOrder::ONE);
        assert_eq!(NormOrder::TWO.conjugate(), NormOrder::TWO);
        assert_eq!(NormOrder::new(3.0).unwrap().conjugate().value(), 1.5);
    }

    #[test]
    fn theta_json_roundtrip() {
        let layout = TimeLayout::new(4, 3).unwrap();
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 3.0]);
        let est = ThetaEstimate::new(layout, vec![0.7, 1.0, 2.0], Some(cov), 12).unwrap();
        let json = serde_json::to_string(&est).unwrap();
        let back: ThetaEstimate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, est);
        let p: NormOrder = serde_json::from_str("\"inf\"").unwrap();
        assert!(p.is_infinite());
    }
}
