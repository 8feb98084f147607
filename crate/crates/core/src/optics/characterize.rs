//! Source characterization from a measured emission spectrum.

use std::str::FromStr;

use crate::error::{invalid, Error, Result};

const PLANCK: f64 = 6.626_070_15e-34; // J·s
const LIGHT_SPEED: f64 = 299_792_458.0; // m/s
const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19; // C

/// Spectral power density φ(λ) sampled on a strictly increasing wavelength grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    wavelength_nm: Vec<f64>,
    power_w_per_nm: Vec<f64>,
}

impl Spectrum {
    pub fn new(wavelength_nm: Vec<f64>, power_w_per_nm: Vec<f64>) -> Result<Self> {
        if wavelength_nm.len() != power_w_per_nm.len() {
            return Err(invalid("wavelength and power columns differ in length"));
        }
        if wavelength_nm.len() < 2 {
            return Err(invalid("a spectrum needs at least two samples"));
        }
        if wavelength_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("wavelength grid must be strictly increasing"));
        }
        Ok(Self {
            wavelength_nm,
            power_w_per_nm,
        })
    }

    pub fn wavelengths(&self) -> &[f64] {
        &self.wavelength_nm
    }

    pub fn powers(&self) -> &[f64] {
        &self.power_w_per_nm
    }

    /// Multiplies every sample by `factor`.
    pub fn scaled(&self, factor: f64) -> Spectrum {
        Spectrum {
            wavelength_nm: self.wavelength_nm.clone(),
            power_w_per_nm: self.power_w_per_nm.iter().map(|p| p * factor).collect(),
        }
    }

    /// Trapezoidal ∫ f(λ, φ(λ)) dλ over the grid, λ in nm.
    fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.wavelength_nm
            .windows(2)
            .zip(self.power_w_per_nm.windows(2))
            .map(|(l, p)| 0.5 * (l[1] - l[0]) * (f(l[0], p[0]) + f(l[1], p[1])))
            .sum()
    }

    /// Total optical power in W.
    pub fn total_power(&self) -> f64 {
        self.integrate(|_, p| p)
    }

    /// Emitted photons per second.
    pub fn photon_rate(&self) -> f64 {
        self.integrate(|l, p| p * l * 1e-9 / (PLANCK * LIGHT_SPEED))
    }
}

/// Two whitespace-separated columns `λ_nm φ_W_per_nm`; `#` starts a comment.
impl FromStr for Spectrum {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut wl = Vec::new();
        let mut pw = Vec::new();
        for (lineno, line) in s.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(|c: char| c.is_whitespace() || c == ',').filter(|c| !c.is_empty());
            let parse = |c: Option<&str>| -> Result<f64> {
                c.ok_or_else(|| invalid(format!("line {}: expected two columns", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))
            };
            wl.push(parse(cols.next())?);
            pw.push(parse(cols.next())?);
        }
        Spectrum::new(wl, pw)
    }
}

/// External quantum efficiency: emitted photons per injected carrier.
///
/// `current_density` in A/cm², `area` in cm².
pub fn compute_eqe(spectrum: &Spectrum, current_density: f64, area: f64) -> Result<f64> {
    if !(current_density > 0.0) || !(area > 0.0) {
        return Err(invalid("current density and area must be positive"));
    }
    let carriers_per_s = current_density * area / ELEMENTARY_CHARGE;
    Ok(spectrum.photon_rate() / carriers_per_s)
}

/// Radiance in W·m⁻²·sr⁻¹ of a Lambertian emitter of `area` cm².
pub fn compute_radiance(spectrum: &Spectrum, area: f64) -> Result<f64> {
    if !(area > 0.0) {
        return Err(invalid("area must be positive"));
    }
    Ok(spectrum.total_power() / (std::f64::consts::PI * area * 1e-4))
}
