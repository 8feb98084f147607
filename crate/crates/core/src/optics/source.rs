use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{invalid, precondition, Result};

/// Piecewise-linear brightness multiplier versus elapsed time in days.
///
/// Points are `[day, multiplier]` pairs with ascending days. Before the first
/// point and after the last the multiplier is held constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DegradationCurve {
    points: Vec<[f64; 2]>,
}

impl Default for DegradationCurve {
    /// Flat for the first 8 days, then a linear fade to 55% at day 22.
    fn default() -> Self {
        Self {
            points: vec![[0.0, 1.0], [8.0, 1.0], [22.0, 0.55]],
        }
    }
}

impl DegradationCurve {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        let curve = Self { points };
        curve.validate()?;
        Ok(curve)
    }

    /// A device that never fades.
    pub fn constant() -> Self {
        Self {
            points: vec![[0.0, 1.0]],
        }
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(invalid("degradation curve needs at least one point"));
        }
        for w in self.points.windows(2) {
            if w[1][0] <= w[0][0] {
                return Err(invalid("degradation curve days must be strictly increasing"));
            }
            if w[1][1] > w[0][1] {
                return Err(invalid("degradation multiplier must be non-increasing in time"));
            }
        }
        if let Some(p) = self.points.iter().find(|p| !(p[1] > 0.0 && p[1] <= 1.0)) {
            return Err(invalid(format!("degradation multiplier {} outside (0, 1]", p[1])));
        }
        Ok(())
    }

    pub fn multiplier(&self, days: f64) -> f64 {
        let pts = &self.points;
        if days <= pts[0][0] {
            return pts[0][1];
        }
        for w in pts.windows(2) {
            let ([t0, m0], [t1, m1]) = (w[0], w[1]);
            if days <= t1 {
                return m0 + (m1 - m0) * (days - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1][1]
    }
}

/// Emission parameters of the weak-coherent source after attenuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SourceConfig {
    /// Expected photons per detection window at full brightness.
    pub mean_photon_number: f64,
    /// nm
    pub center_wavelength: f64,
    /// nm
    pub fwhm: f64,
    /// photons/s at full brightness
    pub nominal_flux: f64,
    pub degradation_curve: DegradationCurve,
    /// Detection-window duration in seconds.
    pub window: f64,
    /// Liquid-crystal waveplate settling time charged on every preparation change, s.
    pub lc_switch_latency: f64,
}

impl SourceConfig {
    pub const DEFAULT_MEAN_PHOTON_NUMBER: f64 = 0.075;
    pub const DEFAULT_WINDOW: f64 = 1.78e-9;
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mean_photon_number: Self::DEFAULT_MEAN_PHOTON_NUMBER,
            center_wavelength: 804.0,
            fwhm: 41.6,
            nominal_flux: Self::DEFAULT_MEAN_PHOTON_NUMBER / Self::DEFAULT_WINDOW,
            degradation_curve: DegradationCurve::default(),
            window: Self::DEFAULT_WINDOW,
            lc_switch_latency: 0.05,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_photon_number > 0.0 && self.mean_photon_number.is_finite()) {
            return Err(invalid("mean_photon_number must be positive"));
        }
        if !(self.window > 0.0) {
            return Err(invalid("window must be positive"));
        }
        if self.nominal_flux < 0.0 || self.lc_switch_latency < 0.0 {
            return Err(invalid("nominal_flux and lc_switch_latency must be non-negative"));
        }
        self.degradation_curve.validate()
    }

    /// The same source after `days` of operation: mean photon number scaled
    /// by the degradation multiplier.
    pub fn at_time(&self, days: f64) -> SourceConfig {
        let mut aged = self.clone();
        aged.mean_photon_number *= self.degradation_curve.multiplier(days.max(0.0));
        aged
    }

    /// Probability that a window carries two or more photons.
    pub fn multiphoton_fraction(&self) -> f64 {
        let mu = self.mean_photon_number;
        // 1 - e^{-μ}(1 + μ), written to avoid cancellation at small μ
        -(-mu).exp_m1() - mu * (-mu).exp()
    }
}

/// Photon flux after `days` of operation. Negative times count as day 0.
pub fn source_flux(days: f64, source: &SourceConfig) -> f64 {
    source.nominal_flux * source.degradation_curve.multiplier(days.max(0.0))
}

/// Poisson probability N̄ⁿe^(−N̄)/n!, evaluated in log space.
pub fn poisson_pmf(n: u64, mean: f64) -> Result<f64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(invalid(format!("Poisson mean must be non-negative, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    let k = n as f64;
    Ok((k * mean.ln() - mean - ln_gamma(k + 1.0)).exp())
}

/// Draws a photon count from Poisson(mean).
pub fn sample_photon_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonFit {
    /// Maximum-likelihood mean (the sample mean).
    pub mean: f64,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// (observed, expected) per pooled bin; the last bin is the open tail.
    pub bins: Vec<(u64, f64)>,
}

/// Fits a Poisson law to `histogram[n]` = number of windows with `n` counts
/// and runs a chi-square goodness-of-fit test.
///
/// Adjacent bins are pooled until each expects at least five events; the last
/// bin collects the whole upper tail. One degree of freedom is spent on the
/// fitted mean.
pub fn fit_poisson(histogram: &[u64]) -> Result<PoissonFit> {
    const MIN_EXPECTED: f64 = 5.0;
    let total: u64 = histogram.iter().sum();
    if histogram.is_empty() || total == 0 {
        return Err(invalid("histogram is empty"));
    }
    if total < 100 {
        return Err(precondition(format!("need at least 100 occurrences, got {total}")));
    }
    let total_f = total as f64;
    let mean = histogram
        .iter()
        .enumerate()
        .map(|(n, &c)| n as f64 * c as f64)
        .sum::<f64>()
        / total_f;

    let mut bins: Vec<(u64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0u64, 0.0f64);
    let mut cdf = 0.0;
    let last = histogram.len() - 1;
    for (n, &count) in histogram.iter().enumerate() {
        let pmf = poisson_pmf(n as u64, mean)?;
        obs += count;
        exp += total_f * pmf;
        cdf += pmf;
        let tail = total_f * (1.0 - cdf).max(0.0);
        if n < last && exp >= MIN_EXPECTED && tail >= MIN_EXPECTED {
            bins.push((obs, exp));
            obs = 0;
            exp = 0.0;
        }
    }
    exp += total_f * (1.0 - cdf).max(0.0);
    match bins.last_mut() {
        Some(prev) if exp < MIN_EXPECTED => {
            prev.0 += obs;
            prev.1 += exp;
        }
        _ => bins.push((obs, exp)),
    }

    let chi_square: f64 = bins
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o as f64 - e).powi(2) / e } else { 0.0 })
        .sum();
    let dof = bins.len().saturating_sub(2);
    let p_value = if dof == 0 {
        1.0
    } else {
        gamma_ur(dof as f64 / 2.0, chi_square / 2.0)
    };
    Ok(PoissonFit {
        mean,
        chi_square,
        degrees_of_freedom: dof,
        p_value,
        bins,
    })
}
