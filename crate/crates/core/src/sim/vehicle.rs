use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{IdmParams, SimError, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    Car,
    TruckBus,
}

impl VehicleClass {
    pub fn length(self) -> f64 {
        match self {
            VehicleClass::Car => 5.0,
            VehicleClass::TruckBus => 12.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::TruckBus => "truck_bus",
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "car" => Some(VehicleClass::Car),
            "truck_bus" => Some(VehicleClass::TruckBus),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fuel {
    Ice,
    Ev,
}

/// Index into the emission model's vehicle-age bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgeBand(pub u8);

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub fuel: Fuel,
    pub age_band: AgeBand,
    /// Adoption flag; the vehicle is policy-driven once control is active.
    pub controlled: bool,
    pub approach: usize,
    pub lane: usize,
    /// Front-bumper position from the lane entry (m).
    pub pos: f64,
    pub speed: f64,
    /// Acceleration realized over the last step.
    pub accel: f64,
    /// Acceleration realized over the step before that.
    pub accel_prev: f64,
    pub turn: Turn,
    pub idm: IdmParams,
    pub spawn_step: u64,
    pub exit_step: Option<u64>,
}

impl Vehicle {
    pub fn length(&self) -> f64 {
        self.class.length()
    }

    pub fn rear(&self) -> f64 {
        self.pos - self.length()
    }
}

/// Adoption draw for one vehicle: controlled with probability `level`.
pub fn adopts<R: Rng + ?Sized>(rng: &mut R, level: f64) -> bool {
    rng.random::<f64>() < level
}

/// Share of EVs and heavy vehicles among arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetMix {
    pub ev_share: f64,
    pub truck_bus_share: f64,
    #[serde(default = "default_age_bands")]
    pub age_bands: u8,
}

fn default_age_bands() -> u8 {
    3
}

impl Default for FleetMix {
    fn default() -> Self {
        Self {
            ev_share: 0.0,
            truck_bus_share: 0.05,
            age_bands: default_age_bands(),
        }
    }
}

impl FleetMix {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [("ev_share", self.ev_share), ("truck_bus_share", self.truck_bus_share)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.age_bands == 0 {
            return Err(SimError::InvalidConfig("age_bands must be >= 1".into()));
        }
        Ok(())
    }
}

/// Distribution of IDM parameters over a driver population, stated over
/// θ = [v_desired, gap_min, headway_time, accel_max, decel_comf].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverModel {
    /// Independent log-normal marginals.
    Lognormal { mean_ln: [f64; 5], sd_ln: [f64; 5] },
    /// Uniform choice among stored parameter vectors (e.g. posterior draws).
    Empirical { draws: Vec<[f64; 5]> },
}

impl DriverModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, accel_exp: f64) -> IdmParams {
        let theta = match self {
            DriverModel::Lognormal { mean_ln, sd_ln } => {
                let mut t = [0.0; 5];
                for k in 0..5 {
                    let z: f64 = rng.sample(StandardNormal);
                    t[k] = (mean_ln[k] + sd_ln[k] * z).exp();
                }
                t
            }
            DriverModel::Empirical { draws } => draws[rng.random_range(0..draws.len())],
        };
        IdmParams {
            v_desired: theta[0],
            gap_min: theta[1],
            headway_time: theta[2],
            accel_max: theta[3],
            decel_comf: theta[4],
            accel_exp,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            DriverModel::Lognormal { mean_ln, sd_ln } => {
                if mean_ln.iter().chain(sd_ln).any(|x| !x.is_finite()) || sd_ln.iter().any(|s| *s < 0.0) {
                    return Err(SimError::InvalidConfig("lognormal driver model: bad moments".into()));
                }
            }
            DriverModel::Empirical { draws } => {
                if draws.is_empty() || draws.iter().flatten().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(SimError::InvalidConfig(
                        "empirical driver model needs positive finite draws".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Driver models per vehicle class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverPopulation {
    pub car: DriverModel,
    pub truck_bus: DriverModel,
    #[serde(default = "default_accel_exp")]
    pub accel_exp: f64,
}

fn default_accel_exp() -> f64 {
    4.0
}

impl Default for DriverPopulation {
    fn default() -> Self {
        let ln = |v: [f64; 5]| v.map(f64::ln);
        Self {
            car: DriverModel::Lognormal {
                mean_ln: ln([15.0, 2.0, 1.5, 1.5, 2.0]),
                sd_ln: [0.1; 5],
            },
            truck_bus: DriverModel::Lognormal {
                mean_ln: ln([13.0, 3.0, 2.0, 1.0, 1.5]),
                sd_ln: [0.1; 5],
            },
            accel_exp: default_accel_exp(),
        }
    }
}

impl DriverPopulation {
    pub fn model(&self, class: VehicleClass) -> &DriverModel {
        match class {
            VehicleClass::Car => &self.car,
            VehicleClass::TruckBus => &self.truck_bus,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.car.validate()?;
        self.truck_bus.validate()?;
        if !(self.accel_exp.is_finite() && self.accel_exp >= 1.0) {
            return Err(SimError::InvalidConfig("accel_exp must be >= 1".into()));
        }
        Ok(())
    }
}
