//! Weak-coherent source, polarization state preparation and the untrusted
//! measurement box (polarizing beam splitter + two threshold detectors).
//!
//! Everything here is a pure function of its arguments plus an explicit,
//! caller-owned random generator, so identical seeds replay identical event
//! streams.

mod characterize;
mod detector;
mod source;

pub use characterize::{compute_eqe, compute_radiance, Spectrum};
pub use detector::{
    outcome_probabilities, simulate_round, Advance, ExactSampler, OutcomeProbabilities,
    PhotonSimulator, RoundSource,
};
pub use source::{
    fit_poisson, poisson_pmf, sample_photon_count, source_flux, DegradationCurve, PoissonFit,
    SourceConfig,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, invalid, Result};

/// Jones vector of a single-photon polarization qubit in the H/V basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    pub amplitude_h: Complex64,
    pub amplitude_v: Complex64,
}

impl PolarizationState {
    const NORM_TOLERANCE: f64 = 1e-12;

    pub fn new(amplitude_h: Complex64, amplitude_v: Complex64) -> Result<Self> {
        let norm = amplitude_h.norm_sqr() + amplitude_v.norm_sqr();
        if (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(invalid(format!("Jones vector must have unit norm, got {norm}")));
        }
        Ok(Self {
            amplitude_h,
            amplitude_v,
        })
    }

    /// |⟨H|ψ⟩|²
    pub fn prob_h(&self) -> f64 {
        self.amplitude_h.norm_sqr()
    }

    /// |⟨V|ψ⟩|²
    pub fn prob_v(&self) -> f64 {
        self.amplitude_v.norm_sqr()
    }

    /// ⟨ψ|P|ψ⟩ for a 2×2 operator given row-major in the H/V basis.
    pub fn expectation(&self, op: &[[Complex64; 2]; 2]) -> Complex64 {
        let psi = [self.amplitude_h, self.amplitude_v];
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, row) in op.iter().enumerate() {
            for (j, &entry) in row.iter().enumerate() {
                acc += psi[i].conj() * entry * psi[j];
            }
        }
        acc
    }
}

/// The three states the trusted preparation device can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preparation {
    /// ω₀ = |H⟩, test state.
    H,
    /// ω₁ = |V⟩, test state.
    V,
    /// ω₂ = |R⟩ = (|H⟩ + i|V⟩)/√2, generation state.
    R,
}

impl Preparation {
    pub const ALL: [Preparation; 3] = [Preparation::H, Preparation::V, Preparation::R];

    pub fn index(self) -> usize {
        match self {
            Preparation::H => 0,
            Preparation::V => 1,
            Preparation::R => 2,
        }
    }

    pub fn from_index(choice: usize) -> Result<Self> {
        match choice {
            0 => Ok(Preparation::H),
            1 => Ok(Preparation::V),
            2 => Ok(Preparation::R),
            other => Err(invalid(format!("state index must be 0, 1 or 2, got {other}"))),
        }
    }

    pub fn state(self) -> PolarizationState {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (h, v) = match self {
            Preparation::H => (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)),
            Preparation::V => (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)),
            Preparation::R => (Complex64::new(s, 0.0), Complex64::new(0.0, s)),
        };
        PolarizationState {
            amplitude_h: h,
            amplitude_v: v,
        }
    }
}

/// Jones vector of ω_choice.
pub fn prepare_state(choice: usize) -> Result<PolarizationState> {
    Preparation::from_index(choice).map(Preparation::state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiscardReason {
    NoClick,
    DoubleClick,
}

/// Outcome of one detection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectionEvent {
    /// Exactly one detector fired: D₁ gives 0, D₂ gives 1.
    Bit(u8),
    Discard(DiscardReason),
}

impl DetectionEvent {
    pub fn bit(self) -> Option<u8> {
        match self {
            DetectionEvent::Bit(b) => Some(b),
            DetectionEvent::Discard(_) => None,
        }
    }
}

/// The measurement box the user does not trust: a PBS routing photons to D₁
/// (outcome 0) or D₂ (outcome 1), followed by two threshold detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementBoxConfig {
    pub detector_efficiency: f64,
    /// Dark-count probability per detection window, per detector.
    pub dark_count_prob: f64,
    /// Probability that an H-polarized photon exits towards D₁.
    pub pbs_transmission_h: f64,
    /// Probability that a V-polarized photon exits towards D₂.
    pub pbs_transmission_v: f64,
}

impl Default for MeasurementBoxConfig {
    fn default() -> Self {
        // The H/V split reproduces a 0.97 mean success probability with the
        // transmission/reflection asymmetry seen in the measured test data.
        Self {
            detector_efficiency: 0.25,
            dark_count_prob: 1e-6,
            pbs_transmission_h: 0.992,
            pbs_transmission_v: 0.948,
        }
    }
}

impl MeasurementBoxConfig {
    /// Unit efficiency, no dark counts, perfect PBS.
    pub fn ideal() -> Self {
        Self {
            detector_efficiency: 1.0,
            dark_count_prob: 0.0,
            pbs_transmission_h: 1.0,
            pbs_transmission_v: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("detector_efficiency", self.detector_efficiency)?;
        check_probability("dark_count_prob", self.dark_count_prob)?;
        check_probability("pbs_transmission_h", self.pbs_transmission_h)?;
        check_probability("pbs_transmission_v", self.pbs_transmission_v)
    }

    /// Probability that a single photon in `state` is routed to D₁.
    pub fn route_to_d1(&self, state: &PolarizationState) -> f64 {
        state.prob_h() * self.pbs_transmission_h + state.prob_v() * (1.0 - self.pbs_transmission_v)
    }
}
