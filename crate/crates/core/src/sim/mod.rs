//! Discrete-time microscopic simulation kernel for one signalized
//! intersection.
//!
//! Each approach is modelled as parallel lanes running from the entry
//! (position 0) to the stop line (`lane_length`), through the junction box
//! and onto an exit link, after which the vehicle leaves the network.
//! Vehicles follow IDM unless they are controlled and control is active,
//! in which case the caller supplies their accelerations.

mod idm;
pub mod rng;
pub mod safety;
mod signal;
mod state;
mod topology;
pub mod trace;
mod vehicle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use idm::{desired_gap, displacement, equilibrium_speed, idm_acceleration, speed_update, IdmParams};
pub use signal::{ApproachTimeline, Light, Phase, SignalPlan, SignalState, SpawnGate};
pub use state::{Kinematics, LaneChange, Neighbor, Scenario, SimState, StepEvents};
pub use topology::{default_turn_lane_map, default_turn_shares, Approach, IntersectionTopology, Turn};
pub use vehicle::{adopts, AgeBand, DriverModel, DriverPopulation, FleetMix, Fuel, Vehicle, VehicleClass, VehicleId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid input {what} = {value}")]
    InvalidInput { what: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("collision at step {step}: vehicle {follower} overlaps leader {leader} (gap {gap:.4} m)")]
    Collision {
        step: u64,
        follower: VehicleId,
        leader: VehicleId,
        gap: f64,
    },
    #[error("no acceleration commanded for controlled vehicle {0}")]
    MissingCommand(VehicleId),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Step length (s).
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Episode length in steps, warmup included.
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    /// [min, max] acceleration (m/s²).
    #[serde(default = "default_accel_bounds")]
    pub accel_bounds: [f64; 2],
    #[serde(default)]
    pub spawn_gate: Option<SpawnGate>,
}

fn default_dt() -> f64 {
    0.5
}
fn default_horizon() -> u64 {
    1000
}
fn default_warmup() -> u64 {
    50
}
fn default_accel_bounds() -> [f64; 2] {
    [-7.5, 3.0]
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            horizon: default_horizon(),
            warmup: default_warmup(),
            accel_bounds: default_accel_bounds(),
            spawn_gate: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SimError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.warmup >= self.horizon {
            return Err(SimError::InvalidConfig(format!(
                "warmup {} must be < horizon {}",
                self.warmup, self.horizon
            )));
        }
        let [lo, hi] = self.accel_bounds;
        if !(lo < 0.0 && hi > 0.0 && lo.is_finite() && hi.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "accel_bounds must satisfy min < 0 < max, got [{lo}, {hi}]"
            )));
        }
        if let Some(g) = &self.spawn_gate {
            if !(g.cycle_s > 0.0 && g.green_s > 0.0 && g.green_s <= g.cycle_s && g.offset_s >= 0.0) {
                return Err(SimError::InvalidConfig("spawn_gate timing is inconsistent".into()));
            }
        }
        Ok(())
    }

    pub fn max_brake(&self) -> f64 {
        -self.accel_bounds[0]
    }
}
