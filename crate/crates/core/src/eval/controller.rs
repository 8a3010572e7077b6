//! Reference controllers for the controlled vehicles. They read the
//! environment directly (perfect sensing) in addition to observations.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvError, Location, Observation};
use crate::sim::rng::{stream, StreamId};
use crate::sim::{SignalState, VehicleId};

pub trait Controller {
    fn name(&self) -> &'static str;
    fn act(
        &mut self,
        env: &Env,
        observations: &BTreeMap<VehicleId, Observation>,
    ) -> Result<BTreeMap<VehicleId, f64>, EnvError>;
}

/// Serializable controller choice for campaign specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    IdmMimic,
    GlideToGreen,
    Throttled {
        #[serde(default = "default_throttle")]
        max_speed: f64,
    },
    Random,
}

fn default_throttle() -> f64 {
    3.0
}

impl ControllerSpec {
    pub fn build(&self, episode_seed: u64) -> Box<dyn Controller + Send> {
        match self {
            ControllerSpec::IdmMimic => Box::new(IdmMimic),
            ControllerSpec::GlideToGreen => Box::new(GlideToGreen),
            ControllerSpec::Throttled { max_speed } => Box::new(Throttled { max_speed: *max_speed }),
            ControllerSpec::Random => Box::new(RandomAccel::new(episode_seed)),
        }
    }
}

/// Commands each vehicle's own IDM acceleration, reproducing human driving.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdmMimic;

impl Controller for IdmMimic {
    fn name(&self) -> &'static str {
        "idm_mimic"
    }

    fn act(&mut self, env: &Env, obs: &BTreeMap<VehicleId, Observation>) -> Result<BTreeMap<VehicleId, f64>, EnvError> {
        obs.keys()
            .map(|&id| Ok((id, env.state().idm_command(id)?)))
            .collect()
    }
}

/// Constant speed that reaches the stop line `dist` metres ahead when the
/// light turns green, or the speed limit when the vehicle can still pass.
///
/// Passing follows the human yellow rule: a vehicle inside its comfortable
/// stopping distance `v²/(2·decel_comf)` at yellow onset crosses, so green is
/// reachable from up to `limit·remaining + limit²/(2·decel_comf)` away.
pub fn glide_target_speed(obs: &Observation, decel_comf: f64) -> f64 {
    let e = &obs.ego;
    let limit = obs.context.speed_limit;
    let dist = e.distance_to_signal;
    if e.location != Location::Approaching || dist <= 0.0 {
        return limit;
    }
    let until_green = match e.signal_state {
        SignalState::Green => {
            if dist <= limit * e.phase_time_remaining + limit * limit / (2.0 * decel_comf) {
                return limit;
            }
            e.next_green_2nd_cycle
        }
        SignalState::Red => e.phase_time_remaining,
        SignalState::Yellow => {
            if dist <= e.speed * e.speed / (2.0 * decel_comf) {
                return limit;
            }
            e.phase_time_remaining + obs.context.red_s
        }
    };
    if until_green <= 0.0 {
        limit
    } else {
        (dist / until_green).min(limit)
    }
}

/// Glide-to-green speed advisory, never more aggressive than IDM
/// car-following.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlideToGreen;

impl Controller for GlideToGreen {
    fn name(&self) -> &'static str {
        "glide_to_green"
    }

    fn act(&mut self, env: &Env, obs: &BTreeMap<VehicleId, Observation>) -> Result<BTreeMap<VehicleId, f64>, EnvError> {
        let dt = env.spec().sim.dt;
        obs.iter()
            .map(|(&id, o)| {
                let v = env.state().vehicle(id).ok_or(EnvError::UnknownVehicle(id))?;
                let target = glide_target_speed(o, v.idm.decel_comf);
                let track = ((target - o.ego.speed) / dt).clamp(-v.idm.decel_comf, v.idm.accel_max);
                Ok((id, track.min(env.state().idm_follow_command(id)?)))
            })
            .collect()
    }
}

/// IDM capped at a low cruising speed; used to provoke throughput loss.
#[derive(Debug, Clone, Copy)]
pub struct Throttled {
    pub max_speed: f64,
}

impl Controller for Throttled {
    fn name(&self) -> &'static str {
        "throttled"
    }

    fn act(&mut self, env: &Env, obs: &BTreeMap<VehicleId, Observation>) -> Result<BTreeMap<VehicleId, f64>, EnvError> {
        let dt = env.spec().sim.dt;
        obs.iter()
            .map(|(&id, o)| {
                let cap = (self.max_speed - o.ego.speed) / dt;
                Ok((id, env.state().idm_command(id)?.min(cap)))
            })
            .collect()
    }
}

/// Uniform random accelerations within the configured bounds.
#[derive(Debug, Clone)]
pub struct RandomAccel {
    rng: rand_chacha::ChaCha8Rng,
}

impl RandomAccel {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: stream(seed, StreamId::Controller),
        }
    }
}

impl Controller for RandomAccel {
    fn name(&self) -> &'static str {
        "random"
    }

    fn act(&mut self, env: &Env, obs: &BTreeMap<VehicleId, Observation>) -> Result<BTreeMap<VehicleId, f64>, EnvError> {
        let [lo, hi] = env.spec().sim.accel_bounds;
        Ok(obs.keys().map(|&id| (id, self.rng.random_range(lo..=hi))).collect())
    }
}
