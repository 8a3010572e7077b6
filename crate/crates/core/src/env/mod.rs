//! Multi-agent environment over the simulation kernel.
//!
//! `reset` runs the warmup with every vehicle human-driven, then hands the
//! controlled vehicles to the caller. Each `step` clamps the commanded
//! accelerations, integrates, scores the post-step fleet and returns the
//! next observations. Observations are taken after the kernel has synced
//! the signal and applied lane changes for the coming step, so a controller
//! sees exactly the state its command will act on.

mod observation;
mod reward;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextVector;
use crate::emissions::{co2_rate, EmissionCoefficients, EmissionContext, EmissionError};
use crate::sim::safety::ttc;
use crate::sim::{DriverPopulation, Fuel, SimConfig, SimError, SimState, StepEvents, VehicleId};

pub use observation::{
    layout, observe, EgoObservation, LayoutField, Location, NeighborObservation, Observation, ObservedContext,
    TurnSignal, OBS_DIM, SENSING_CAP, TIME_CAP,
};
pub use reward::{comfort_term, fleet_ttc_term, jerk_term, reward, FleetMember, RewardBreakdown, RewardConfig};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("action for unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("no action for controlled vehicle {0}")]
    MissingAction(VehicleId),
    #[error("reward needs at least one vehicle")]
    EmptyFleet,
    #[error("episode is over")]
    Done,
    #[error("environment has not been reset")]
    NotReset,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Emission(#[from] EmissionError),
}

/// Everything needed to run one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub context: ContextVector,
    /// Episode seed; every random stream derives from it.
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub reward: RewardConfig,
    /// Human driver parameter source.
    #[serde(default)]
    pub drivers: DriverPopulation,
}

impl EpisodeSpec {
    pub fn new(context: ContextVector, seed: u64) -> Self {
        Self {
            context,
            seed,
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            drivers: DriverPopulation::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.sim.validate()?;
        self.reward.validate()?;
        self.context
            .validate()
            .map_err(|e| EnvError::InvalidConfig(e.to_string()))
    }
}

/// Lifetime record of one vehicle, kept for metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub approach: usize,
    pub fuel: Fuel,
    pub controlled: bool,
    pub spawn_step: u64,
    pub exit_step: Option<u64>,
    /// Grams of CO2 emitted so far.
    pub emission_g: f64,
    pub abs_accel_sum: f64,
    pub jerk_sum: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepInfo {
    pub step: u64,
    pub exited: Vec<VehicleId>,
    /// Grams emitted by the whole fleet this step.
    pub fleet_emission_g: f64,
    /// Vehicles that left the network since warmup ended.
    pub throughput: u64,
    /// Minimum TTC over all following pairs after the step (s).
    pub min_ttc: f64,
    /// Accelerations actually applied to controlled vehicles.
    pub applied: BTreeMap<VehicleId, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observations: BTreeMap<VehicleId, Observation>,
    pub rewards: BTreeMap<VehicleId, RewardBreakdown>,
    pub done: bool,
    pub info: StepInfo,
}

/// One environment instance; owns its kernel state.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EpisodeSpec,
    coefficients: EmissionCoefficients,
    state: SimState,
    records: BTreeMap<VehicleId, VehicleRecord>,
    throughput: u64,
    total_emission_g: f64,
    min_ttc_seen: f64,
}

impl Env {
    /// Build the kernel, run the warmup and return the first observations.
    pub fn reset(
        spec: EpisodeSpec,
        coefficients: EmissionCoefficients,
    ) -> Result<(Self, BTreeMap<VehicleId, Observation>), EnvError> {
        Self::reset_with_control(spec, coefficients, true)
    }

    /// Like [`Env::reset`]; with `control = false` every vehicle stays
    /// human-driven for the whole episode (the human baseline).
    pub fn reset_with_control(
        spec: EpisodeSpec,
        coefficients: EmissionCoefficients,
        control: bool,
    ) -> Result<(Self, BTreeMap<VehicleId, Observation>), EnvError> {
        spec.validate()?;
        let state = SimState::new(spec.sim.clone(), spec.context.scenario(spec.seed), spec.drivers.clone())?;
        let mut env = Self {
            spec,
            coefficients,
            state,
            records: BTreeMap::new(),
            throughput: 0,
            total_emission_g: 0.0,
            min_ttc_seen: f64::INFINITY,
        };
        let none = BTreeMap::new();
        for _ in 0..env.spec.sim.warmup {
            let events = env.state.advance(&none)?;
            env.account(&events)?;
        }
        env.state.set_control_active(control);
        env.state.prepare_step();
        let obs = env.observations();
        Ok((env, obs))
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    /// Read access to the kernel, for privileged controllers and metrics.
    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn records(&self) -> &BTreeMap<VehicleId, VehicleRecord> {
        &self.records
    }

    pub fn throughput(&self) -> u64 {
        self.throughput
    }

    pub fn total_emission_g(&self) -> f64 {
        self.total_emission_g
    }

    pub fn min_ttc_seen(&self) -> f64 {
        self.min_ttc_seen
    }

    pub fn controlled_steps(&self) -> u64 {
        self.state.step_count().saturating_sub(self.spec.sim.warmup)
    }

    pub fn is_done(&self) -> bool {
        self.state.step_count() >= self.spec.sim.horizon
    }

    /// Controlled vehicles awaiting an action.
    pub fn agents(&self) -> Vec<VehicleId> {
        self.state.commanded_ids()
    }

    pub fn observe(&self, id: VehicleId) -> Option<Observation> {
        let w = &self.spec.context.weather;
        observe(&self.state, id, (w.temperature, w.humidity))
    }

    pub fn observations(&self) -> BTreeMap<VehicleId, Observation> {
        self.agents()
            .into_iter()
            .filter_map(|id| self.observe(id).map(|o| (id, o)))
            .collect()
    }

    /// Rule-based limit on a commanded acceleration: capped by the bounds
    /// and by the braking-distance bound against the leader or an engaged
    /// stop line.
    pub fn safety_clamp(&self, id: VehicleId, proposed: f64) -> Result<f64, EnvError> {
        Ok(self.state.safety_clamp(id, proposed)?)
    }

    pub fn step(&mut self, actions: &BTreeMap<VehicleId, f64>) -> Result<StepResult, EnvError> {
        if self.is_done() {
            return Err(EnvError::Done);
        }
        let agents = self.agents();
        let mut info = StepInfo::default();
        for (&id, _) in actions.iter() {
            match self.state.vehicle(id) {
                None => return Err(EnvError::UnknownVehicle(id)),
                Some(_) if !self.state.is_commanded(id) => {
                    info.warnings.push(format!("ignored action for human-driven vehicle {id}"))
                }
                Some(_) => {}
            }
        }
        let mut applied = BTreeMap::new();
        for id in agents {
            let a = *actions.get(&id).ok_or(EnvError::MissingAction(id))?;
            if !a.is_finite() {
                return Err(EnvError::InvalidConfig(format!("action for {id} is not finite")));
            }
            applied.insert(id, self.state.safety_clamp(id, a)?);
        }
        let events = self.state.finish_step(&applied)?;
        let fleet = self.account(&events)?;
        let min_ttc = self.min_ttc();
        let rewards = if fleet.is_empty() {
            BTreeMap::new()
        } else {
            let all = reward(&fleet, min_ttc, &self.spec.reward, self.spec.sim.dt)?;
            all.into_iter().filter(|(id, _)| applied.contains_key(id)).collect()
        };
        self.state.prepare_step();
        info.step = events.step;
        info.exited = events.exited.iter().map(|v| v.id).collect();
        info.fleet_emission_g = fleet.iter().map(|m| m.emission_g).sum();
        info.throughput = self.throughput;
        info.min_ttc = min_ttc;
        info.applied = applied;
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: self.is_done(),
            info,
        })
    }

    fn min_ttc(&self) -> f64 {
        let mut best = f64::INFINITY;
        for v in self.state.vehicles() {
            if let Some(l) = self.state.leader(v.id) {
                best = best.min(ttc(l.gap.max(0.0), v.speed - l.speed));
            }
        }
        best
    }

    /// Fold one step's kinematics into the vehicle records and counters.
    fn account(&mut self, events: &StepEvents) -> Result<Vec<FleetMember>, EnvError> {
        let dt = self.spec.sim.dt;
        let weather = self.spec.context.weather;
        let mut fleet = Vec::with_capacity(events.kinematics.len());
        for k in &events.kinematics {
            let grade = self.state.topology().approaches[k.approach].road_grade;
            let ctx = EmissionContext {
                class: k.class,
                fuel: k.fuel,
                age_band: k.age_band,
                temperature: weather.temperature,
                humidity: weather.humidity,
                road_grade: grade,
            };
            let e = co2_rate(k.speed, k.accel, &ctx, &self.coefficients)? * dt;
            let rec = self.records.entry(k.id).or_insert_with(|| VehicleRecord {
                id: k.id,
                approach: k.approach,
                fuel: k.fuel,
                controlled: k.controlled,
                spawn_step: 0,
                exit_step: None,
                emission_g: 0.0,
                abs_accel_sum: 0.0,
                jerk_sum: 0.0,
                steps: 0,
            });
            rec.emission_g += e;
            rec.abs_accel_sum += k.accel.abs();
            rec.jerk_sum += jerk_term(k.accel, k.accel_prev, dt);
            rec.steps += 1;
            self.total_emission_g += e;
            fleet.push(FleetMember {
                id: k.id,
                speed: k.speed,
                emission_g: e,
                accel: k.accel,
                accel_prev: k.accel_prev,
            });
        }
        for v in &events.exited {
            if let Some(rec) = self.records.get_mut(&v.id) {
                rec.spawn_step = v.spawn_step;
                rec.exit_step = v.exit_step;
            }
            if events.step > self.spec.sim.warmup {
                self.throughput += 1;
            }
        }
        for id in &events.spawned {
            let v = self.state.vehicle(*id).expect("spawned vehicle present");
            self.records.insert(
                *id,
                VehicleRecord {
                    id: *id,
                    approach: v.approach,
                    fuel: v.fuel,
                    controlled: v.controlled,
                    spawn_step: v.spawn_step,
                    exit_step: None,
                    emission_g: 0.0,
                    abs_accel_sum: 0.0,
                    jerk_sum: 0.0,
                    steps: 0,
                },
            );
        }
        if events.step > self.spec.sim.warmup {
            self.min_ttc_seen = self.min_ttc_seen.min(self.min_ttc());
        }
        Ok(fleet)
    }
}
