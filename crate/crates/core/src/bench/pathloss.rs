use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Log-distance model of the tag-to-reader link, `ζ = β (d/d₀)^(−γ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossParams {
    pub carrier_hz: f64,
    pub reference_m: f64,
    pub exponent: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            carrier_hz: 900e6,
            reference_m: 1.0,
            exponent: 2.7,
        }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("carrier frequency", self.carrier_hz),
            ("reference distance", self.reference_m),
            ("path-loss exponent", self.exponent),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Free-space loss at the reference distance, `(λ / (4π d₀))²`.
    pub fn beta(&self) -> f64 {
        (self.wavelength() / (4.0 * std::f64::consts::PI * self.reference_m)).powi(2)
    }
}

/// Linear ζ at tag-to-reader distance `d` metres.
pub fn zeta_from_distance(p: &PathLossParams, d: f64) -> Result<f64> {
    p.validate()?;
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!(
            "distance must be positive, got {d}"
        )));
    }
    Ok(p.beta() * (d / p.reference_m).powf(-p.exponent))
}
