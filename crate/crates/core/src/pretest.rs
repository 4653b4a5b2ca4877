//! The severity pretest: compare estimated pre-treatment severity with the
//! acceptable threshold `M`.
//!
//! `phi` follows the rejection convention: `phi = 1` means the estimated
//! severity exceeds `M`, so the extrapolation condition is declared false.
//! No critical value or p-value is involved.

use serde::{Deserialize, Serialize};

use crate::domain::{SeverityParams, ThetaEstimate, ViolationMode};
use crate::error::Result;
use crate::severity::severity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretestResult {
    pub s_pre_hat: f64,
    pub threshold_m: f64,
    /// 1 = reject (extrapolation condition declared false).
    pub phi: u8,
    /// `threshold_m - s_pre_hat`; nonnegative exactly when `phi = 0`.
    pub margin: f64,
    pub mode: ViolationMode,
}

impl PretestResult {
    pub fn from_severity(s_pre_hat: f64, threshold_m: f64, mode: ViolationMode) -> Self {
        // equality passes
        let phi = u8::from(s_pre_hat > threshold_m);
        PretestResult {
            s_pre_hat,
            threshold_m,
            phi,
            margin: threshold_m - s_pre_hat,
            mode,
        }
    }

    pub fn rejects(&self) -> bool {
        self.phi == 1
    }

    /// Whether the extrapolation condition is declared true.
    pub fn extrapolation_declared(&self) -> bool {
        self.phi == 0
    }
}

/// Runs the pretest. In overall mode an iterative estimate is first
/// converted to overall violations.
pub fn run_pretest(est: &ThetaEstimate, params: &SeverityParams) -> Result<PretestResult> {
    params.validate()?;
    let s = match (params.mode, est.mode()) {
        (ViolationMode::Overall, ViolationMode::Iterative) => severity(est.to_overall()?.pre_block(), params.p)?,
        _ => severity(est.pre_block(), params.p)?,
    };
    Ok(PretestResult::from_severity(s, params.threshold_m, params.mode))
}
