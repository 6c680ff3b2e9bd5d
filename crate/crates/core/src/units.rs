//! Spectral unit conversions.
//!
//! Wavelengths are stored in meters and frequencies in hertz; the speed of
//! light is the exact SI value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A vacuum wavelength in meters.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Wavelength(f64);

/// An optical frequency in hertz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(f64);

impl Wavelength {
    pub fn from_meters(m: f64) -> Result<Self> {
        if m.is_finite() && m > 0.0 {
            Ok(Wavelength(m))
        } else {
            Err(Error::domain(format!("wavelength must be positive, got {m} m")))
        }
    }

    pub fn from_nm(nm: f64) -> Result<Self> {
        Self::from_meters(nm * 1e-9)
    }

    pub fn meters(self) -> f64 {
        self.0
    }

    pub fn nm(self) -> f64 {
        self.0 * 1e9
    }

    pub fn to_frequency(self) -> Frequency {
        Frequency(SPEED_OF_LIGHT / self.0)
    }
}

impl Frequency {
    pub fn from_hz(hz: f64) -> Result<Self> {
        if hz.is_finite() && hz > 0.0 {
            Ok(Frequency(hz))
        } else {
            Err(Error::domain(format!("frequency must be positive, got {hz} Hz")))
        }
    }

    pub fn hz(self) -> f64 {
        self.0
    }

    pub fn to_wavelength(self) -> Wavelength {
        Wavelength(SPEED_OF_LIGHT / self.0)
    }
}

/// Converts a frequency FWHM to the equivalent wavelength FWHM around
/// `center`, using the first-order relation `Δλ = λ² Δν / c`.
pub fn freq_bandwidth_to_wavelength(delta_nu_hz: f64, center: Wavelength) -> Result<f64> {
    if !(delta_nu_hz.is_finite() && delta_nu_hz > 0.0) {
        return Err(Error::domain(format!(
            "bandwidth must be positive, got {delta_nu_hz} Hz"
        )));
    }
    let lambda = center.meters();
    Ok(lambda * lambda * delta_nu_hz / SPEED_OF_LIGHT)
}
