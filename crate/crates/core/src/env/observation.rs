//! Per-vehicle observation and its fixed flat layout.
//!
//! Flat layout (offset: field, width):
//!
//! ```text
//!  0 ego.speed                     1
//!  1 ego.distance_to_signal        1   signed, negative past the stop line
//!  2 ego.signal_state              3   one-hot red, yellow, green
//!  5 ego.phase_time_remaining      1   capped at TIME_CAP
//!  6 ego.next_green_2nd_cycle      1   capped at TIME_CAP
//!  7 ego.next_green_3rd_cycle      1   capped at TIME_CAP
//!  8 ego.location                  3   one-hot approaching, at, exiting
//! 11 ego.lane_index                1
//! 12 ego.turn_intention            3   one-hot left, straight, right
//! 15 neighbors                    36   6 slots x [present, speed,
//!                                      relative_distance, turn_signal one-hot
//!                                      left, right, none]; slot order
//!                                      same/left/right lane x leader/follower
//! 51 context                      10   adoption_level, green_s, red_s,
//!                                      cycle_s, temperature, humidity, ev,
//!                                      lane_count, lane_length, speed_limit
//! ```
//!
//! Absent neighbors read `[0, 0, SENSING_CAP, 0, 0, 1]`.

use serde::{Deserialize, Serialize};

use crate::sim::{Fuel, SignalState, SimState, Turn, Vehicle, VehicleId};

/// Neighbor sensing range (m).
pub const SENSING_CAP: f64 = 100.0;
/// Cap on reported signal times (s).
pub const TIME_CAP: f64 = 300.0;
pub const OBS_DIM: usize = 61;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Approaching,
    At,
    Exiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnSignal {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoObservation {
    pub speed: f64,
    pub distance_to_signal: f64,
    pub signal_state: SignalState,
    pub phase_time_remaining: f64,
    pub next_green_2nd_cycle: f64,
    pub next_green_3rd_cycle: f64,
    pub location: Location,
    pub lane_index: usize,
    pub turn_intention: Turn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborObservation {
    pub present: bool,
    pub speed: f64,
    pub relative_distance: f64,
    pub turn_signal: TurnSignal,
}

impl NeighborObservation {
    pub const ABSENT: Self = Self {
        present: false,
        speed: 0.0,
        relative_distance: SENSING_CAP,
        turn_signal: TurnSignal::None,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedContext {
    pub adoption_level: f64,
    /// Green plus yellow per cycle for the ego approach (s).
    pub green_s: f64,
    pub red_s: f64,
    pub cycle_s: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub fuel: Fuel,
    pub lane_count: usize,
    pub lane_length: f64,
    pub speed_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ego: EgoObservation,
    /// Same, left, right lane; leader then follower.
    pub neighbors: [NeighborObservation; 6],
    pub context: ObservedContext,
}

/// Name, offset and width of one flat-array field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayoutField {
    pub name: &'static str,
    pub offset: usize,
    pub width: usize,
}

const fn f(name: &'static str, offset: usize, width: usize) -> LayoutField {
    LayoutField { name, offset, width }
}

const NEIGHBOR_SLOTS: [&str; 6] = [
    "same_leader",
    "same_follower",
    "left_leader",
    "left_follower",
    "right_leader",
    "right_follower",
];

/// Flat layout descriptor, in array order.
pub fn layout() -> Vec<LayoutField> {
    let mut out = vec![
        f("ego.speed", 0, 1),
        f("ego.distance_to_signal", 1, 1),
        f("ego.signal_state", 2, 3),
        f("ego.phase_time_remaining", 5, 1),
        f("ego.next_green_2nd_cycle", 6, 1),
        f("ego.next_green_3rd_cycle", 7, 1),
        f("ego.location", 8, 3),
        f("ego.lane_index", 11, 1),
        f("ego.turn_intention", 12, 3),
    ];
    let names: [[&'static str; 4]; 6] = [
        ["neighbors.same_leader.present", "neighbors.same_leader.speed", "neighbors.same_leader.relative_distance", "neighbors.same_leader.turn_signal"],
        ["neighbors.same_follower.present", "neighbors.same_follower.speed", "neighbors.same_follower.relative_distance", "neighbors.same_follower.turn_signal"],
        ["neighbors.left_leader.present", "neighbors.left_leader.speed", "neighbors.left_leader.relative_distance", "neighbors.left_leader.turn_signal"],
        ["neighbors.left_follower.present", "neighbors.left_follower.speed", "neighbors.left_follower.relative_distance", "neighbors.left_follower.turn_signal"],
        ["neighbors.right_leader.present", "neighbors.right_leader.speed", "neighbors.right_leader.relative_distance", "neighbors.right_leader.turn_signal"],
        ["neighbors.right_follower.present", "neighbors.right_follower.speed", "neighbors.right_follower.relative_distance", "neighbors.right_follower.turn_signal"],
    ];
    debug_assert_eq!(names.len(), NEIGHBOR_SLOTS.len());
    for (slot, n) in names.iter().enumerate() {
        let base = 15 + slot * 6;
        out.extend([f(n[0], base, 1), f(n[1], base + 1, 1), f(n[2], base + 2, 1), f(n[3], base + 3, 3)]);
    }
    out.extend([
        f("context.adoption_level", 51, 1),
        f("context.green_s", 52, 1),
        f("context.red_s", 53, 1),
        f("context.cycle_s", 54, 1),
        f("context.temperature", 55, 1),
        f("context.humidity", 56, 1),
        f("context.ev", 57, 1),
        f("context.lane_count", 58, 1),
        f("context.lane_length", 59, 1),
        f("context.speed_limit", 60, 1),
    ]);
    out
}

fn one_hot<const N: usize>(i: usize) -> [f64; N] {
    let mut v = [0.0; N];
    v[i] = 1.0;
    v
}

impl Observation {
    pub fn to_flat(&self) -> Vec<f64> {
        let e = &self.ego;
        let mut out = Vec::with_capacity(OBS_DIM);
        out.push(e.speed);
        out.push(e.distance_to_signal);
        out.extend(one_hot::<3>(match e.signal_state {
            SignalState::Red => 0,
            SignalState::Yellow => 1,
            SignalState::Green => 2,
        }));
        out.extend([e.phase_time_remaining, e.next_green_2nd_cycle, e.next_green_3rd_cycle]);
        out.extend(one_hot::<3>(e.location as usize));
        out.push(e.lane_index as f64);
        out.extend(one_hot::<3>(e.turn_intention as usize));
        for n in &self.neighbors {
            out.push(if n.present { 1.0 } else { 0.0 });
            out.push(n.speed);
            out.push(n.relative_distance);
            out.extend(one_hot::<3>(n.turn_signal as usize));
        }
        let c = &self.context;
        out.extend([
            c.adoption_level,
            c.green_s,
            c.red_s,
            c.cycle_s,
            c.temperature,
            c.humidity,
            if c.fuel == Fuel::Ev { 1.0 } else { 0.0 },
            c.lane_count as f64,
            c.lane_length,
            c.speed_limit,
        ]);
        debug_assert_eq!(out.len(), OBS_DIM);
        out
    }
}

/// Direction a vehicle is signalling, if it still needs to change lanes.
fn turn_signal(state: &SimState, v: &Vehicle) -> TurnSignal {
    let a = &state.topology().approaches[v.approach];
    if v.pos >= a.lane_length || a.serves(v.lane, v.turn) {
        return TurnSignal::None;
    }
    match a.nearest_serving_lane(v.lane, v.turn) {
        Some(t) if t > v.lane => TurnSignal::Left,
        Some(t) if t < v.lane => TurnSignal::Right,
        _ => TurnSignal::None,
    }
}

fn location(state: &SimState, v: &Vehicle) -> Location {
    let a = &state.topology().approaches[v.approach];
    let past = v.pos - a.lane_length;
    if past < 0.0 {
        Location::Approaching
    } else if past < state.topology().junction_length {
        Location::At
    } else {
        Location::Exiting
    }
}

/// Build the observation of vehicle `id`.
pub fn observe(
    state: &SimState,
    id: VehicleId,
    weather: (f64, f64),
) -> Option<Observation> {
    let v = state.vehicle(id)?;
    let approach = &state.topology().approaches[v.approach];
    let clock = state.clock();
    let timeline = state.timeline(v.approach);
    let light = timeline.light(clock);
    let onsets = timeline.green_onsets(clock, 3);
    let (second, third) = if light.state == SignalState::Green {
        (onsets[0], onsets[1])
    } else {
        (onsets[1], onsets[2])
    };
    let ego = EgoObservation {
        speed: v.speed,
        distance_to_signal: state.distance_to_line(v),
        signal_state: light.state,
        phase_time_remaining: light.remaining.min(TIME_CAP),
        next_green_2nd_cycle: second.min(TIME_CAP),
        next_green_3rd_cycle: third.min(TIME_CAP),
        location: location(state, v),
        lane_index: v.lane,
        turn_intention: v.turn,
    };
    let sense = |n: Option<crate::sim::Neighbor>| match n {
        Some(n) if n.gap <= SENSING_CAP => NeighborObservation {
            present: true,
            speed: n.speed,
            relative_distance: n.gap.max(-SENSING_CAP),
            turn_signal: turn_signal(state, state.vehicle(n.id).expect("neighbor exists")),
        },
        _ => NeighborObservation::ABSENT,
    };
    let mut neighbors = [NeighborObservation::ABSENT; 6];
    neighbors[0] = sense(state.leader(id));
    neighbors[1] = sense(state.follower(id));
    let lanes = [(v.lane + 1 < approach.lane_count).then(|| v.lane + 1), v.lane.checked_sub(1)];
    for (k, lane) in lanes.into_iter().enumerate() {
        if let Some(lane) = lane {
            let (l, f) = state.neighbors_at(v.approach, lane, v.pos, v.length(), id);
            neighbors[2 + 2 * k] = sense(l);
            neighbors[3 + 2 * k] = sense(f);
        }
    }
    let green = timeline.green_time();
    let context = ObservedContext {
        adoption_level: state.scenario().adoption_level,
        green_s: green,
        red_s: timeline.cycle() - green,
        cycle_s: timeline.cycle(),
        temperature: weather.0,
        humidity: weather.1,
        fuel: v.fuel,
        lane_count: approach.lane_count,
        lane_length: approach.lane_length,
        speed_limit: approach.speed_limit,
    };
    Some(Observation { ego, neighbors, context })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_sized() {
        let l = layout();
        let mut next = 0;
        for field in &l {
            assert_eq!(field.offset, next, "{}", field.name);
            next += field.width;
        }
        assert_eq!(next, OBS_DIM);
        let mut names: Vec<_> = l.iter().map(|f| f.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), l.len());
        assert!(NEIGHBOR_SLOTS.iter().all(|s| l.iter().any(|f| f.name.contains(s))));
    }
}
