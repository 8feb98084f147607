//! Min-entropy certification in the measurement-device-independent setting:
//! the preparation is trusted, the measurement box is not.

mod oracle;
mod program;

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Result};
use crate::protocol::SuccessEstimate;

/// Convergence target of the numeric program in P_g.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;
/// Granularity to which certified min-entropy is rounded down.
pub const H_MIN_GRANULARITY: f64 = 1e-4;
/// Allowed excess of the grid oracle over the numeric program.
pub const ORACLE_TOLERANCE: f64 = 1e-3;
pub const MIN_ORACLE_RESOLUTION: usize = 64;

/// Maximal probability that an eavesdropper who may have built the
/// measurement box guesses the outcome on |R⟩, over all strategies that
/// reproduce p(0|H) = `p_suc_h` and p(1|V) = `p_suc_v`.
pub fn guessing_probability(p_suc_h: f64, p_suc_v: f64) -> Result<f64> {
    check_probability("p_suc_h", p_suc_h)?;
    check_probability("p_suc_v", p_suc_v)?;
    Ok(program::Program::new(p_suc_h, p_suc_v).solve().clamp(0.5, 1.0))
}

/// −log₂ p_g
pub fn min_entropy(p_g: f64) -> Result<f64> {
    if !(p_g > 0.0 && p_g <= 1.0) {
        return Err(invalid(format!("guessing probability must lie in (0, 1], got {p_g}")));
    }
    Ok(-p_g.log2() + 0.0)
}

/// Best guessing probability within a discretized strategy family; a lower
/// bound on [`guessing_probability`].
pub fn oracle_guessing_probability(p_suc_h: f64, p_suc_v: f64, grid_resolution: usize) -> Result<f64> {
    check_probability("p_suc_h", p_suc_h)?;
    check_probability("p_suc_v", p_suc_v)?;
    if grid_resolution < MIN_ORACLE_RESOLUTION {
        return Err(invalid(format!(
            "grid resolution must be at least {MIN_ORACLE_RESOLUTION}, got {grid_resolution}"
        )));
    }
    oracle::solve(p_suc_h, p_suc_v, grid_resolution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NumericProgram,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub convergence: f64,
    pub h_min_floor: f64,
    /// Statistical error on the success probabilities is reported, not
    /// subtracted.
    pub finite_size_correction: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            convergence: CONVERGENCE_TOLERANCE,
            h_min_floor: H_MIN_GRANULARITY,
            finite_size_correction: false,
        }
    }
}

/// Certification from the mean success probability used for both states.
/// Reported for comparison only; the per-state certificate is the one used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedCertificate {
    pub p_suc: f64,
    pub p_g: f64,
    pub h_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub p_suc_h: f64,
    pub p_suc_v: f64,
    pub p_g: f64,
    /// Bits per round, rounded down to [`H_MIN_GRANULARITY`].
    pub h_min: f64,
    pub method: Method,
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaged: Option<AveragedCertificate>,
}

fn floor_h_min(h: f64) -> f64 {
    ((h / H_MIN_GRANULARITY + 1e-9).floor() * H_MIN_GRANULARITY).clamp(0.0, 1.0)
}

impl Certificate {
    fn build(p_suc_h: f64, p_suc_v: f64, p_g: f64, method: Method) -> Result<Self> {
        let avg = 0.5 * (p_suc_h + p_suc_v);
        let avg_pg = guessing_probability(avg, avg)?;
        Ok(Certificate {
            p_suc_h,
            p_suc_v,
            p_g,
            h_min: floor_h_min(min_entropy(p_g)?),
            method,
            tolerances: Tolerances::default(),
            sigma_h: None,
            sigma_v: None,
            averaged: Some(AveragedCertificate {
                p_suc: avg,
                p_g: avg_pg,
                h_min: floor_h_min(min_entropy(avg_pg)?),
            }),
        })
    }
}

/// Certifies with both success probabilities (never their average).
pub fn certify(p_suc_h: f64, p_suc_v: f64) -> Result<Certificate> {
    let p_g = guessing_probability(p_suc_h, p_suc_v)?;
    Certificate::build(p_suc_h, p_suc_v, p_g, Method::NumericProgram)
}

pub fn certify_with_oracle(p_suc_h: f64, p_suc_v: f64, grid_resolution: usize) -> Result<Certificate> {
    let p_g = oracle_guessing_probability(p_suc_h, p_suc_v, grid_resolution)?;
    Certificate::build(p_suc_h, p_suc_v, p_g, Method::Oracle)
}

pub fn certify_estimate(estimate: &SuccessEstimate) -> Result<Certificate> {
    let mut cert = certify(estimate.h.value, estimate.v.value)?;
    cert.sigma_h = Some(estimate.h.sigma);
    cert.sigma_v = Some(estimate.v.sigma);
    Ok(cert)
}
