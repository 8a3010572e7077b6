use serde::{Deserialize, Serialize};

use super::SimError;

/// Movement a vehicle intends to make at the stop line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Straight, Turn::Right];
}

/// One incoming road. Lane 0 is the rightmost lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Approach {
    pub lane_count: usize,
    /// Distance from the lane entry to the stop line (m).
    pub lane_length: f64,
    pub speed_limit: f64,
    /// Percent grade, positive uphill.
    #[serde(default)]
    pub road_grade: f64,
    /// Movements permitted from each lane, indexed by lane.
    pub turn_lane_map: Vec<Vec<Turn>>,
    /// Shares of arrivals intending left, straight, right.
    #[serde(default = "default_turn_shares")]
    pub turn_shares: [f64; 3],
    /// Indices of the signal phases serving this approach.
    pub phases: Vec<usize>,
}

pub fn default_turn_shares() -> [f64; 3] {
    [0.2, 0.6, 0.2]
}

/// Conventional lane assignment: leftmost lane carries lefts, rightmost
/// carries rights, every lane carries straight traffic.
pub fn default_turn_lane_map(lane_count: usize) -> Vec<Vec<Turn>> {
    match lane_count {
        0 => Vec::new(),
        1 => vec![Turn::ALL.to_vec()],
        n => (0..n)
            .map(|lane| {
                let mut turns = Vec::new();
                if lane == n - 1 {
                    turns.push(Turn::Left);
                }
                turns.push(Turn::Straight);
                if lane == 0 {
                    turns.push(Turn::Right);
                }
                turns
            })
            .collect(),
    }
}

impl Approach {
    pub fn new(lane_count: usize, lane_length: f64, speed_limit: f64, phases: Vec<usize>) -> Self {
        Self {
            lane_count,
            lane_length,
            speed_limit,
            road_grade: 0.0,
            turn_lane_map: default_turn_lane_map(lane_count),
            turn_shares: default_turn_shares(),
            phases,
        }
    }

    pub fn serves(&self, lane: usize, turn: Turn) -> bool {
        self.turn_lane_map
            .get(lane)
            .is_some_and(|turns| turns.contains(&turn))
    }

    /// Nearest lane permitting `turn`; ties go to the lower index.
    pub fn nearest_serving_lane(&self, from: usize, turn: Turn) -> Option<usize> {
        (0..self.lane_count)
            .filter(|&lane| self.serves(lane, turn))
            .min_by_key(|&lane| (lane.abs_diff(from), lane))
    }
}

/// Geometry of one signalized intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionTopology {
    pub approaches: Vec<Approach>,
    /// Length of the path through the junction box (m).
    #[serde(default = "default_junction_length")]
    pub junction_length: f64,
    /// Length of the outgoing link before a vehicle leaves the network (m).
    #[serde(default = "default_exit_length")]
    pub exit_length: f64,
}

fn default_junction_length() -> f64 {
    20.0
}

fn default_exit_length() -> f64 {
    60.0
}

impl IntersectionTopology {
    pub fn new(approaches: Vec<Approach>) -> Self {
        Self {
            approaches,
            junction_length: default_junction_length(),
            exit_length: default_exit_length(),
        }
    }

    /// Full longitudinal extent of an approach path, entry to network exit.
    pub fn path_length(&self, approach: usize) -> f64 {
        self.approaches[approach].lane_length + self.junction_length + self.exit_length
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.approaches.is_empty() {
            return Err(SimError::InvalidConfig("topology has no approaches".into()));
        }
        if !(self.junction_length >= 0.0 && self.exit_length > 0.0) {
            return Err(SimError::InvalidConfig(
                "junction_length must be >= 0 and exit_length > 0".into(),
            ));
        }
        for (i, a) in self.approaches.iter().enumerate() {
            let field_err = |field: &str, detail: String| {
                Err(SimError::InvalidConfig(format!("approach {i}: {field}: {detail}")))
            };
            if a.lane_count < 1 {
                return field_err("lane_count", "must be >= 1".into());
            }
            if !(a.lane_length.is_finite() && a.lane_length > 0.0) {
                return field_err("lane_length", format!("must be > 0, got {}", a.lane_length));
            }
            if !(a.speed_limit.is_finite() && a.speed_limit > 0.0) {
                return field_err("speed_limit", format!("must be > 0, got {}", a.speed_limit));
            }
            if !a.road_grade.is_finite() {
                return field_err("road_grade", "must be finite".into());
            }
            if a.turn_lane_map.len() != a.lane_count {
                return field_err(
                    "turn_lane_map",
                    format!("has {} entries for {} lanes", a.turn_lane_map.len(), a.lane_count),
                );
            }
            if a.turn_shares.iter().any(|s| !(s.is_finite() && *s >= 0.0))
                || a.turn_shares.iter().sum::<f64>() <= 0.0
            {
                return field_err("turn_shares", "must be non-negative with positive sum".into());
            }
            for (turn, share) in Turn::ALL.iter().zip(a.turn_shares) {
                if share > 0.0 && !a.turn_lane_map.iter().any(|l| l.contains(turn)) {
                    return field_err("turn_lane_map", format!("no lane serves {turn:?}"));
                }
            }
            if a.phases.is_empty() {
                return field_err("phases", "approach belongs to no phase".into());
            }
        }
        Ok(())
    }
}
