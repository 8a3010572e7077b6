use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::idm::{desired_gap_raw, idm_raw};
use super::rng::Streams;
use super::vehicle::adopts;
use super::safety::{clamp_accel, stop_line_engaged, stopping_distance, Obstacle, SafetyBound};
use super::{
    displacement, equilibrium_speed, speed_update, AgeBand, ApproachTimeline, DriverPopulation, FleetMix, Fuel,
    IdmParams, IntersectionTopology, Light, SignalPlan, SimConfig, SimError, Turn, Vehicle, VehicleClass, VehicleId,
};

/// Everything the kernel needs to instantiate one intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub topology: IntersectionTopology,
    pub plan: SignalPlan,
    /// Arrival rate per approach (veh/h).
    pub inflows: Vec<f64>,
    #[serde(default)]
    pub fleet: FleetMix,
    #[serde(default)]
    pub adoption_level: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        self.topology.validate()?;
        self.plan.validate(&self.topology)?;
        self.fleet.validate()?;
        if self.inflows.len() != self.topology.approaches.len() {
            return Err(SimError::InvalidConfig(format!(
                "inflows: expected {} entries, got {}",
                self.topology.approaches.len(),
                self.inflows.len()
            )));
        }
        if let Some(q) = self.inflows.iter().find(|q| !(q.is_finite() && **q >= 0.0)) {
            return Err(SimError::InvalidConfig(format!("inflows: {q} is not a rate >= 0")));
        }
        if !(0.0..=1.0).contains(&self.adoption_level) {
            return Err(SimError::InvalidConfig(format!(
                "adoption_level: {} outside [0, 1]",
                self.adoption_level
            )));
        }
        Ok(())
    }
}

/// Nearest vehicle ahead of or behind a position in one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: VehicleId,
    /// Bumper-to-bumper distance (m), measured from the querying vehicle.
    pub gap: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChange {
    pub id: VehicleId,
    pub approach: usize,
    pub from: usize,
    pub to: usize,
}

/// Per-vehicle outcome of one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub fuel: Fuel,
    pub age_band: AgeBand,
    pub approach: usize,
    pub controlled: bool,
    pub speed: f64,
    pub accel: f64,
    pub accel_prev: f64,
    pub exited: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepEvents {
    /// Index of the step just completed (1-based).
    pub step: u64,
    pub lane_changes: Vec<LaneChange>,
    /// Vehicles that moved this step, in id order.
    pub kinematics: Vec<Kinematics>,
    /// Final records of vehicles that left the network.
    pub exited: Vec<Vehicle>,
    pub spawned: Vec<VehicleId>,
}

#[derive(Debug, Clone, PartialEq)]
struct Pending {
    class: VehicleClass,
    fuel: Fuel,
    age_band: AgeBand,
    turn: Turn,
    idm: IdmParams,
    controlled: bool,
}

/// Full kernel world state.
#[derive(Debug, Clone)]
pub struct SimState {
    config: SimConfig,
    scenario: Scenario,
    drivers: DriverPopulation,
    timelines: Vec<ApproachTimeline>,
    step: u64,
    phase_index: usize,
    phase_elapsed: f64,
    vehicles: BTreeMap<VehicleId, Vehicle>,
    /// `[approach][lane]`, front-most vehicle first.
    lanes: Vec<Vec<Vec<VehicleId>>>,
    pending: Vec<VecDeque<Pending>>,
    streams: Streams,
    next_id: u64,
    spawned: u64,
    exited: u64,
    control_active: bool,
    prepared: bool,
    pending_changes: Vec<LaneChange>,
}

impl SimState {
    pub fn new(config: SimConfig, scenario: Scenario, drivers: DriverPopulation) -> Result<Self, SimError> {
        config.validate()?;
        scenario.validate()?;
        drivers.validate()?;
        let n = scenario.topology.approaches.len();
        let lanes = scenario
            .topology
            .approaches
            .iter()
            .map(|a| vec![Vec::new(); a.lane_count])
            .collect();
        let timelines = scenario.plan.timelines(n);
        let streams = Streams::new(scenario.seed, n);
        let (phase_index, phase_elapsed) = scenario.plan.phase_at(0.0);
        Ok(Self {
            config,
            drivers,
            timelines,
            step: 0,
            phase_index,
            phase_elapsed,
            vehicles: BTreeMap::new(),
            lanes,
            pending: vec![VecDeque::new(); n],
            streams,
            next_id: 0,
            spawned: 0,
            exited: 0,
            control_active: false,
            prepared: false,
            pending_changes: Vec::new(),
            scenario,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn topology(&self) -> &IntersectionTopology {
        &self.scenario.topology
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn clock(&self) -> f64 {
        self.step as f64 * self.config.dt
    }

    pub fn phase(&self) -> (usize, f64) {
        (self.phase_index, self.phase_elapsed)
    }

    pub fn light(&self, approach: usize) -> Light {
        self.timelines[approach].light(self.clock())
    }

    pub fn timeline(&self, approach: usize) -> &ApproachTimeline {
        &self.timelines[approach]
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.values()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.vehicles.get(&id)
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn lane(&self, approach: usize, lane: usize) -> &[VehicleId] {
        &self.lanes[approach][lane]
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn exited(&self) -> u64 {
        self.exited
    }

    pub fn queued(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum()
    }

    pub fn control_active(&self) -> bool {
        self.control_active
    }

    pub fn set_control_active(&mut self, on: bool) {
        self.control_active = on;
    }

    /// Whether the vehicle's acceleration is supplied by the caller.
    pub fn is_commanded(&self, id: VehicleId) -> bool {
        self.control_active && self.vehicles.get(&id).is_some_and(|v| v.controlled)
    }

    /// Controlled vehicles currently awaiting commands, in id order.
    pub fn commanded_ids(&self) -> Vec<VehicleId> {
        if !self.control_active {
            return Vec::new();
        }
        self.vehicles.values().filter(|v| v.controlled).map(|v| v.id).collect()
    }

    /// Place a vehicle directly, bypassing arrivals. Intended for tests and
    /// scripted scenarios; the caller is responsible for a safe placement.
    #[allow(clippy::too_many_arguments)]
    pub fn insert_vehicle(
        &mut self,
        approach: usize,
        lane: usize,
        pos: f64,
        speed: f64,
        class: VehicleClass,
        idm: IdmParams,
        controlled: bool,
        turn: Turn,
    ) -> Result<VehicleId, SimError> {
        let a = self
            .scenario
            .topology
            .approaches
            .get(approach)
            .ok_or_else(|| SimError::InvalidConfig(format!("approach {approach} does not exist")))?;
        if lane >= a.lane_count {
            return Err(SimError::InvalidConfig(format!("approach {approach}: lane {lane} does not exist")));
        }
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(SimError::InvalidInput { what: "speed", value: speed });
        }
        idm.validate()?;
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        let v = Vehicle {
            id,
            class,
            fuel: Fuel::Ice,
            age_band: AgeBand(0),
            controlled,
            approach,
            lane,
            pos,
            speed,
            accel: 0.0,
            accel_prev: 0.0,
            turn,
            idm,
            spawn_step: self.step,
            exit_step: None,
        };
        self.vehicles.insert(id, v);
        self.insert_sorted(approach, lane, id);
        self.spawned += 1;
        Ok(id)
    }

    fn insert_sorted(&mut self, approach: usize, lane: usize, id: VehicleId) {
        let pos = self.vehicles[&id].pos;
        let list = &self.lanes[approach][lane];
        let idx = list
            .iter()
            .position(|other| {
                let o = &self.vehicles[other];
                o.pos < pos || (o.pos == pos && *other > id)
            })
            .unwrap_or(list.len());
        self.lanes[approach][lane].insert(idx, id);
    }

    fn bound(&self, v: &Vehicle) -> SafetyBound {
        SafetyBound {
            gap_min: v.idm.gap_min,
            max_brake: self.config.max_brake(),
            dt: self.config.dt,
        }
    }

    /// Vehicle directly ahead in the same lane.
    pub fn leader(&self, id: VehicleId) -> Option<Neighbor> {
        let v = self.vehicles.get(&id)?;
        let list = &self.lanes[v.approach][v.lane];
        let idx = list.iter().position(|x| *x == id)?;
        let l = &self.vehicles[list.get(idx.checked_sub(1)?)?];
        Some(Neighbor {
            id: l.id,
            gap: l.rear() - v.pos,
            speed: l.speed,
        })
    }

    /// Vehicle directly behind in the same lane.
    pub fn follower(&self, id: VehicleId) -> Option<Neighbor> {
        let v = self.vehicles.get(&id)?;
        let list = &self.lanes[v.approach][v.lane];
        let idx = list.iter().position(|x| *x == id)?;
        let f = &self.vehicles[list.get(idx + 1)?];
        Some(Neighbor {
            id: f.id,
            gap: v.rear() - f.pos,
            speed: f.speed,
        })
    }

    /// Leader and follower a vehicle of length `length` at `pos` would have
    /// in the given lane, ignoring `exclude`.
    pub fn neighbors_at(
        &self,
        approach: usize,
        lane: usize,
        pos: f64,
        length: f64,
        exclude: VehicleId,
    ) -> (Option<Neighbor>, Option<Neighbor>) {
        let mut leader = None;
        let mut follower = None;
        for other in &self.lanes[approach][lane] {
            if *other == exclude {
                continue;
            }
            let o = &self.vehicles[other];
            if o.pos >= pos {
                leader = Some(Neighbor {
                    id: o.id,
                    gap: o.rear() - pos,
                    speed: o.speed,
                });
            } else {
                follower = Some(Neighbor {
                    id: o.id,
                    gap: (pos - length) - o.pos,
                    speed: o.speed,
                });
                break;
            }
        }
        (leader, follower)
    }

    /// Distance from the front bumper to the stop line; negative once past it.
    pub fn distance_to_line(&self, v: &Vehicle) -> f64 {
        self.scenario.topology.approaches[v.approach].lane_length - v.pos
    }

    fn line_engaged(&self, v: &Vehicle) -> bool {
        let light = self.light(v.approach);
        stop_line_engaged(
            light.state,
            self.distance_to_line(v),
            v.speed,
            v.idm.decel_comf,
            self.config.max_brake(),
            self.config.dt,
        )
    }

    /// Unclamped IDM acceleration against the vehicle leader only, ignoring
    /// the signal.
    pub fn idm_follow_command(&self, id: VehicleId) -> Result<f64, SimError> {
        let v = self.vehicles.get(&id).ok_or(SimError::UnknownVehicle(id))?;
        let p = v.idm.capped(self.scenario.topology.approaches[v.approach].speed_limit);
        Ok(match self.leader(id) {
            Some(l) => idm_raw(v.speed, l.gap.max(1e-3), v.speed - l.speed, &p),
            None => idm_raw(v.speed, f64::INFINITY, 0.0, &p),
        })
    }

    /// Unclamped IDM acceleration of a vehicle against its leader and, when
    /// engaged, the stop line.
    pub fn idm_command(&self, id: VehicleId) -> Result<f64, SimError> {
        let v = self.vehicles.get(&id).ok_or(SimError::UnknownVehicle(id))?;
        let limit = self.scenario.topology.approaches[v.approach].speed_limit;
        let p = v.idm.capped(limit);
        let mut a = match self.leader(id) {
            Some(l) => idm_raw(v.speed, l.gap.max(1e-3), v.speed - l.speed, &p),
            None => idm_raw(v.speed, f64::INFINITY, 0.0, &p),
        };
        if self.line_engaged(v) {
            let dist = self.distance_to_line(v);
            a = a.min(idm_raw(v.speed, dist.max(1e-3), v.speed, &p));
        }
        Ok(a)
    }

    /// Largest acceleration that keeps the braking-distance invariant.
    pub fn safe_accel(&self, id: VehicleId) -> Result<f64, SimError> {
        let v = self.vehicles.get(&id).ok_or(SimError::UnknownVehicle(id))?;
        let accel_max = self.config.accel_bounds[1];
        let bound = self.bound(v);
        let mut safe = f64::INFINITY;
        if let Some(l) = self.leader(id) {
            safe = safe.min(bound.max_accel(v.speed, Obstacle { gap: l.gap, speed: l.speed }, accel_max));
        }
        if self.line_engaged(v) {
            let dist = self.distance_to_line(v);
            if stopping_distance(v.speed, bound.max_brake, bound.dt) <= dist {
                let line = SafetyBound { gap_min: 0.0, ..bound };
                safe = safe.min(line.max_accel(v.speed, Obstacle { gap: dist, speed: 0.0 }, accel_max));
            }
        }
        Ok(safe)
    }

    /// Rule-based clamp applied to every acceleration before integration.
    pub fn safety_clamp(&self, id: VehicleId, proposed: f64) -> Result<f64, SimError> {
        Ok(clamp_accel(proposed, self.safe_accel(id)?, self.config.accel_bounds))
    }

    /// Acceleration the kernel applies to a human-driven vehicle.
    pub fn human_accel(&self, id: VehicleId) -> Result<f64, SimError> {
        self.safety_clamp(id, self.idm_command(id)?)
    }

    /// Stages before integration: sync the signal to the clock and run lane
    /// changes. Idempotent until the next `finish_step`.
    pub fn prepare_step(&mut self) -> &[LaneChange] {
        if !self.prepared {
            let (i, e) = self.scenario.plan.phase_at(self.clock());
            self.phase_index = i;
            self.phase_elapsed = e;
            self.pending_changes = self.lane_changes();
            self.prepared = true;
        }
        &self.pending_changes
    }

    /// One full step: `prepare_step` followed by `finish_step`.
    pub fn advance(&mut self, cv_accels: &BTreeMap<VehicleId, f64>) -> Result<StepEvents, SimError> {
        self.prepare_step();
        self.finish_step(cv_accels)
    }

    /// Integration, collision check, exits and arrivals.
    pub fn finish_step(&mut self, cv_accels: &BTreeMap<VehicleId, f64>) -> Result<StepEvents, SimError> {
        self.prepare_step();
        let dt = self.config.dt;
        let mut accels = Vec::with_capacity(self.vehicles.len());
        for v in self.vehicles.values() {
            let a = if self.control_active && v.controlled {
                *cv_accels.get(&v.id).ok_or(SimError::MissingCommand(v.id))?
            } else {
                self.human_accel(v.id)?
            };
            if !a.is_finite() {
                return Err(SimError::InvalidInput { what: "acceleration", value: a });
            }
            accels.push(a);
        }
        let next_step = self.step + 1;
        let mut kinematics = Vec::with_capacity(accels.len());
        for (v, a) in self.vehicles.values_mut().zip(accels) {
            let next = speed_update(v.speed, a, dt);
            let realized = if v.speed + a * dt >= 0.0 { a } else { -v.speed / dt };
            v.pos += displacement(v.speed, next, dt);
            v.speed = next;
            v.accel_prev = v.accel;
            v.accel = realized;
            kinematics.push(Kinematics {
                id: v.id,
                class: v.class,
                fuel: v.fuel,
                age_band: v.age_band,
                approach: v.approach,
                controlled: v.controlled,
                speed: v.speed,
                accel: v.accel,
                accel_prev: v.accel_prev,
                exited: false,
            });
        }
        self.check_collisions(next_step)?;

        let mut exited = Vec::new();
        for a in 0..self.lanes.len() {
            let end = self.scenario.topology.path_length(a);
            for lane in 0..self.lanes[a].len() {
                while let Some(&front) = self.lanes[a][lane].first() {
                    if self.vehicles[&front].pos < end {
                        break;
                    }
                    self.lanes[a][lane].remove(0);
                    let mut v = self.vehicles.remove(&front).expect("lane index out of sync");
                    v.exit_step = Some(next_step);
                    exited.push(v);
                }
            }
        }
        exited.sort_by_key(|v| v.id);
        for k in kinematics.iter_mut() {
            k.exited = exited.binary_search_by_key(&k.id, |v| v.id).is_ok();
        }
        self.exited += exited.len() as u64;

        self.step = next_step;
        let spawned = self.arrivals()?;
        self.prepared = false;
        Ok(StepEvents {
            step: next_step,
            lane_changes: std::mem::take(&mut self.pending_changes),
            kinematics,
            exited,
            spawned,
        })
    }

    fn check_collisions(&self, step: u64) -> Result<(), SimError> {
        for lanes in &self.lanes {
            for list in lanes {
                for pair in list.windows(2) {
                    let (l, f) = (&self.vehicles[&pair[0]], &self.vehicles[&pair[1]]);
                    let gap = l.rear() - f.pos;
                    if gap < 0.0 {
                        return Err(SimError::Collision {
                            step,
                            follower: f.id,
                            leader: l.id,
                            gap,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn pair_ok(&self, follower: &Vehicle, follower_speed: f64, gap: f64, leader_speed: f64) -> bool {
        let b = self.bound(follower);
        let desired = desired_gap_raw(follower_speed, follower_speed - leader_speed, &follower.idm);
        gap >= desired
            && gap >= b.gap_min
            && gap - b.gap_min
                >= stopping_distance(follower_speed, b.max_brake, b.dt)
                    - stopping_distance(leader_speed, b.max_brake, b.dt)
    }

    fn lane_changes(&mut self) -> Vec<LaneChange> {
        let mut events = Vec::new();
        let ids: Vec<VehicleId> = self.vehicles.keys().copied().collect();
        for id in ids {
            let v = &self.vehicles[&id];
            let approach = &self.scenario.topology.approaches[v.approach];
            if approach.lane_count < 2 || v.pos >= approach.lane_length || approach.serves(v.lane, v.turn) {
                continue;
            }
            let Some(target) = approach.nearest_serving_lane(v.lane, v.turn) else {
                continue;
            };
            let to = if target > v.lane { v.lane + 1 } else { v.lane - 1 };
            let (leader, follower) = self.neighbors_at(v.approach, to, v.pos, v.length(), id);
            let ahead_ok = leader.is_none_or(|l| self.pair_ok(v, v.speed, l.gap, l.speed));
            let behind_ok = follower.is_none_or(|f| {
                let fv = &self.vehicles[&f.id];
                self.pair_ok(fv, fv.speed, f.gap, v.speed)
            });
            if !(ahead_ok && behind_ok) {
                continue;
            }
            let (a, from) = (v.approach, v.lane);
            self.lanes[a][from].retain(|x| *x != id);
            self.vehicles.get_mut(&id).expect("vehicle exists").lane = to;
            self.insert_sorted(a, to, id);
            events.push(LaneChange { id, approach: a, from, to });
        }
        events
    }

    fn draw_arrival(&mut self, approach: usize) -> Pending {
        let fleet = &self.scenario.fleet;
        let s = &mut self.streams;
        let class = if s.attributes.random::<f64>() < fleet.truck_bus_share {
            VehicleClass::TruckBus
        } else {
            VehicleClass::Car
        };
        let fuel = if s.attributes.random::<f64>() < fleet.ev_share { Fuel::Ev } else { Fuel::Ice };
        let age_band = AgeBand(s.attributes.random_range(0..fleet.age_bands));
        let shares = self.scenario.topology.approaches[approach].turn_shares;
        let u: f64 = s.attributes.random::<f64>() * shares.iter().sum::<f64>();
        let turn = if u < shares[0] {
            Turn::Left
        } else if u < shares[0] + shares[1] {
            Turn::Straight
        } else {
            Turn::Right
        };
        let idm = self.drivers.model(class).sample(&mut s.drivers, self.drivers.accel_exp);
        let controlled = adopts(&mut s.adoption, self.scenario.adoption_level);
        Pending {
            class,
            fuel,
            age_band,
            turn,
            idm,
            controlled,
        }
    }

    fn arrivals(&mut self) -> Result<Vec<VehicleId>, SimError> {
        let dt = self.config.dt;
        let mut spawned = Vec::new();
        for a in 0..self.lanes.len() {
            let mean = self.scenario.inflows[a] * dt / 3600.0;
            if mean > 0.0 {
                let poisson = Poisson::new(mean).map_err(|_| SimError::InvalidInput { what: "inflow", value: mean })?;
                let n = poisson.sample(&mut self.streams.arrivals[a]) as u64;
                for _ in 0..n {
                    let p = self.draw_arrival(a);
                    self.pending[a].push_back(p);
                }
            }
            let gate_open = self.config.spawn_gate.is_none_or(|g| g.is_open(self.clock()));
            if !gate_open {
                continue;
            }
            while let Some(p) = self.pending[a].front() {
                match self.entry_slot(a, p) {
                    Some((lane, speed)) => {
                        let p = self.pending[a].pop_front().expect("front exists");
                        spawned.push(self.enter(a, lane, speed, p));
                    }
                    None => break,
                }
            }
        }
        Ok(spawned)
    }

    /// Best lane for a queued vehicle and its entry speed, if any lane has room.
    fn entry_slot(&self, a: usize, p: &Pending) -> Option<(usize, f64)> {
        let approach = &self.scenario.topology.approaches[a];
        let best = (0..approach.lane_count)
            .map(|lane| {
                let space = self.lanes[a][lane]
                    .last()
                    .map_or(f64::INFINITY, |id| self.vehicles[id].rear());
                (lane, space)
            })
            .max_by(|x, y| {
                x.1.min(1e12)
                    .total_cmp(&y.1.min(1e12))
                    .then(approach.serves(x.0, p.turn).cmp(&approach.serves(y.0, p.turn)))
                    .then(y.0.cmp(&x.0))
            })?;
        let (lane, space) = best;
        if space < p.idm.gap_min {
            return None;
        }
        let capped = p.idm.capped(approach.speed_limit);
        let bound = SafetyBound {
            gap_min: p.idm.gap_min,
            max_brake: self.config.max_brake(),
            dt: self.config.dt,
        };
        let mut speed = approach.speed_limit.min(capped.v_desired);
        if let Some(id) = self.lanes[a][lane].last() {
            let l = &self.vehicles[id];
            speed = speed
                .min(equilibrium_speed(space, &capped))
                .min(bound.max_speed(Obstacle { gap: space, speed: l.speed }, speed));
        }
        let light = self.light(a);
        if light.state != super::SignalState::Green {
            let line = SafetyBound { gap_min: 0.0, ..bound };
            speed = line.max_speed(Obstacle { gap: approach.lane_length, speed: 0.0 }, speed);
        }
        Some((lane, speed))
    }

    fn enter(&mut self, a: usize, lane: usize, speed: f64, p: Pending) -> VehicleId {
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        let v = Vehicle {
            id,
            class: p.class,
            fuel: p.fuel,
            age_band: p.age_band,
            controlled: p.controlled,
            approach: a,
            lane,
            pos: 0.0,
            speed,
            accel: 0.0,
            accel_prev: 0.0,
            turn: p.turn,
            idm: p.idm,
            spawn_step: self.step,
            exit_step: None,
        };
        self.vehicles.insert(id, v);
        self.lanes[a][lane].push(id);
        self.spawned += 1;
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Approach, Phase};

    fn one_lane(lane_length: f64, green: bool) -> Scenario {
        // Red case: one second of green, then a long red starting at clock 0.
        let phase = Phase {
            green_s: if green { 100.0 } else { 1.0 },
            yellow_s: 0.0,
            red_clearance_s: if green { 0.0 } else { 1000.0 },
            served_approaches: vec![0],
        };
        let offset_s = if green { 0.0 } else { 1000.0 };
        Scenario {
            id: "t".into(),
            topology: IntersectionTopology::new(vec![Approach::new(1, lane_length, 20.0, vec![0])]),
            plan: SignalPlan { phases: vec![phase], offset_s },
            inflows: vec![0.0],
            fleet: FleetMix::default(),
            adoption_level: 0.0,
            seed: 1,
        }
    }

    #[test]
    fn empty_state_only_advances_clock() {
        let mut s = SimState::new(SimConfig::default(), one_lane(200.0, true), DriverPopulation::default()).unwrap();
        for _ in 0..10 {
            s.advance(&BTreeMap::new()).unwrap();
        }
        assert_eq!(s.clock(), 5.0);
        assert_eq!((s.spawned(), s.exited()), (0, 0));
    }

    #[test]
    fn red_signal_stops_vehicle_before_line() {
        let mut s = SimState::new(SimConfig::default(), one_lane(100.0, false), DriverPopulation::default()).unwrap();
        let id = s
            .insert_vehicle(0, 0, 0.0, 15.0, VehicleClass::Car, IdmParams::default(), false, Turn::Straight)
            .unwrap();
        for _ in 0..400 {
            s.advance(&BTreeMap::new()).unwrap();
        }
        let v = s.vehicle(id).unwrap();
        let gap = 100.0 - v.pos;
        assert!(v.speed < 1e-6);
        assert!((0.0..=3.0).contains(&gap), "gap {gap}");
    }

    #[test]
    fn missing_command_is_an_error() {
        let mut s = SimState::new(SimConfig::default(), one_lane(200.0, true), DriverPopulation::default()).unwrap();
        let id = s
            .insert_vehicle(0, 0, 0.0, 10.0, VehicleClass::Car, IdmParams::default(), true, Turn::Straight)
            .unwrap();
        s.set_control_active(true);
        assert_eq!(s.advance(&BTreeMap::new()), Err(SimError::MissingCommand(id)));
    }

    #[test]
    fn overlap_is_reported_as_collision() {
        let mut s = SimState::new(SimConfig::default(), one_lane(200.0, true), DriverPopulation::default()).unwrap();
        let lead = s
            .insert_vehicle(0, 0, 20.0, 0.0, VehicleClass::Car, IdmParams::default(), true, Turn::Straight)
            .unwrap();
        let follow = s
            .insert_vehicle(0, 0, 10.0, 20.0, VehicleClass::Car, IdmParams::default(), true, Turn::Straight)
            .unwrap();
        s.set_control_active(true);
        let cmds = BTreeMap::from([(lead, 0.0), (follow, 0.0)]);
        match s.advance(&cmds) {
            Err(SimError::Collision { follower, leader, .. }) => {
                assert_eq!((follower, leader), (follow, lead));
            }
            other => panic!("expected collision, got {other:?}"),
        }
    }
}
