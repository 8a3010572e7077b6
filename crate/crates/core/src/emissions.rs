//! CO2 surrogate `E(a, v)` built on vehicle-specific power (VSP).
//!
//! ICE rate (g/s) = `(idle + slope·max(0, vsp))` scaled by vehicle class,
//! age band, temperature and humidity. EVs emit nothing at the tailpipe.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sim::{AgeBand, Fuel, VehicleClass};

pub const DEFAULT_COEFFICIENTS: &str = include_str!("../../../data/emissions/default.toml");

#[derive(Debug, Error)]
pub enum EmissionError {
    #[error("unknown age band {0}")]
    UnknownAgeBand(u8),
    #[error("invalid emission context: {0}")]
    InvalidContext(String),
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("cannot parse coefficient file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read coefficient file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionContext {
    pub class: VehicleClass,
    pub fuel: Fuel,
    pub age_band: AgeBand,
    /// °C
    pub temperature: f64,
    /// %RH
    pub humidity: f64,
    /// Percent.
    pub road_grade: f64,
}

impl EmissionContext {
    pub fn reference(class: VehicleClass, fuel: Fuel, age_band: AgeBand) -> Self {
        Self {
            class,
            fuel,
            age_band,
            temperature: 20.0,
            humidity: 50.0,
            road_grade: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VspConstants {
    pub mass_factor: f64,
    pub gravity: f64,
    pub rolling: f64,
    pub drag: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassScale {
    pub car: f64,
    pub truck_bus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeScale {
    pub bands: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureModifier {
    pub reference_c: f64,
    pub curvature: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumidityModifier {
    pub reference_rh: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionCoefficients {
    pub version: u32,
    pub idle_rate: f64,
    pub vsp_slope: f64,
    pub vsp: VspConstants,
    pub class_scale: ClassScale,
    pub age_scale: AgeScale,
    pub temperature: TemperatureModifier,
    pub humidity: HumidityModifier,
}

impl Default for EmissionCoefficients {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_COEFFICIENTS).expect("shipped coefficients are valid")
    }
}

impl EmissionCoefficients {
    pub fn from_toml_str(text: &str) -> Result<Self, EmissionError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, EmissionError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), EmissionError> {
        let bad = |m: &str| Err(EmissionError::InvalidCoefficients(m.to_string()));
        if self.version != 1 {
            return bad("unsupported version");
        }
        if !(self.idle_rate > 0.0) {
            return bad("idle_rate must be > 0");
        }
        if !(self.vsp_slope >= 0.0) {
            return bad("vsp_slope must be >= 0");
        }
        let scales = [self.class_scale.car, self.class_scale.truck_bus];
        if scales.iter().chain(&self.age_scale.bands).any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("class and age scales must be positive");
        }
        if self.age_scale.bands.is_empty() {
            return bad("age_scale.bands is empty");
        }
        if !(self.temperature.curvature >= 0.0 && self.temperature.cap >= 1.0) {
            return bad("temperature modifier needs curvature >= 0 and cap >= 1");
        }
        if !(0.0..1.0).contains(&self.humidity.amplitude) {
            return bad("humidity amplitude must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn temperature_modifier(&self, celsius: f64) -> f64 {
        let t = &self.temperature;
        let d = celsius - t.reference_c;
        (1.0 + t.curvature * d * d).min(t.cap)
    }

    pub fn humidity_modifier(&self, rh: f64) -> f64 {
        let h = &self.humidity;
        1.0 + h.amplitude * (rh - h.reference_rh) / 50.0
    }

    pub fn class_scale(&self, class: VehicleClass) -> f64 {
        match class {
            VehicleClass::Car => self.class_scale.car,
            VehicleClass::TruckBus => self.class_scale.truck_bus,
        }
    }

    pub fn age_scale(&self, band: AgeBand) -> Result<f64, EmissionError> {
        self.age_scale
            .bands
            .get(band.0 as usize)
            .copied()
            .ok_or(EmissionError::UnknownAgeBand(band.0))
    }
}

/// SHA-256 of a coefficient file's bytes, hex encoded.
pub fn coefficient_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Vehicle-specific power (kW/ton).
pub fn vsp(speed: f64, accel: f64, grade: f64, c: &EmissionCoefficients) -> f64 {
    let k = &c.vsp;
    let slope = (grade / 100.0).atan().sin();
    speed * (k.mass_factor * accel + k.gravity * slope + k.rolling) + k.drag * speed * speed * speed
}

/// Tailpipe CO2 rate (g/s).
pub fn co2_rate(speed: f64, accel: f64, ctx: &EmissionContext, c: &EmissionCoefficients) -> Result<f64, EmissionError> {
    if !(ctx.humidity >= 0.0 && ctx.humidity <= 100.0) {
        return Err(EmissionError::InvalidContext(format!("humidity {} outside [0, 100]", ctx.humidity)));
    }
    if !(ctx.road_grade.is_finite() && ctx.temperature.is_finite()) {
        return Err(EmissionError::InvalidContext("grade and temperature must be finite".into()));
    }
    let age = c.age_scale(ctx.age_band)?;
    if ctx.fuel == Fuel::Ev {
        return Ok(0.0);
    }
    let power = vsp(speed, accel, ctx.road_grade, c).max(0.0);
    Ok((c.idle_rate + c.vsp_slope * power)
        * c.class_scale(ctx.class)
        * age
        * c.temperature_modifier(ctx.temperature)
        * c.humidity_modifier(ctx.humidity))
}
