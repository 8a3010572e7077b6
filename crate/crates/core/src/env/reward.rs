use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::sim::VehicleId;

/// Weights of the per-vehicle reward
/// `η·mean_j(u_j) + (1−η)·u_i + extras_i`, with
/// `u = v + stop_penalty·1[v < τ] + emission_weight·e` and `e` in grams per
/// step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Added when the vehicle is stopped; the default is -5 per second of
    /// the default 0.5 s step.
    #[serde(default = "default_stop_penalty")]
    pub stop_penalty: f64,
    /// Per gram of CO2 emitted during the step.
    #[serde(default = "default_emission_weight")]
    pub emission_weight: f64,
    /// Speed below which a vehicle counts as stopped (m/s).
    #[serde(default = "default_stop_threshold")]
    pub stop_threshold: f64,
    #[serde(default)]
    pub comfort_w: f64,
    #[serde(default)]
    pub jerk_w: f64,
    #[serde(default)]
    pub ttc_w: f64,
    /// Cap applied to the fleet minimum TTC (s).
    #[serde(default = "default_ttc_cap")]
    pub ttc_cap: f64,
}

fn default_eta() -> f64 {
    0.5
}
fn default_stop_penalty() -> f64 {
    -2.5
}
fn default_emission_weight() -> f64 {
    -1.0
}
fn default_stop_threshold() -> f64 {
    1.0
}
fn default_ttc_cap() -> f64 {
    20.0
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            eta: default_eta(),
            stop_penalty: default_stop_penalty(),
            emission_weight: default_emission_weight(),
            stop_threshold: default_stop_threshold(),
            comfort_w: 0.0,
            jerk_w: 0.0,
            ttc_w: 0.0,
            ttc_cap: default_ttc_cap(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(EnvError::InvalidConfig(format!("eta {} outside [0, 1]", self.eta)));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(EnvError::InvalidConfig("stop_threshold must be > 0".into()));
        }
        if !(self.ttc_cap > 0.0) {
            return Err(EnvError::InvalidConfig("ttc_cap must be > 0".into()));
        }
        let weights = [self.stop_penalty, self.emission_weight, self.comfort_w, self.jerk_w, self.ttc_w];
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(EnvError::InvalidConfig("reward weights must be finite".into()));
        }
        Ok(())
    }
}

/// One vehicle's state in the fleet snapshot used for rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FleetMember {
    pub id: VehicleId,
    pub speed: f64,
    /// Grams emitted over the step.
    pub emission_g: f64,
    pub accel: f64,
    pub accel_prev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Ego speed term `v_i`.
    pub velocity: f64,
    /// `stop_penalty·1[v_i < τ]`.
    pub stop: f64,
    /// `emission_weight·e_i`.
    pub emission: f64,
    /// Sum of the three ego terms.
    pub ego: f64,
    /// Mean of the ego sums over the fleet.
    pub fleet: f64,
    /// `comfort_w·(−|a_i|)`.
    pub comfort: f64,
    /// `|a_i − a_i,prev|` (m/s²).
    pub jerk_raw: f64,
    /// `|a_i − a_i,prev| / Δt` (m/s³).
    pub jerk_rate: f64,
    /// `jerk_w·(−jerk_rate)`.
    pub jerk: f64,
    /// Capped fleet minimum TTC (s), shared by all vehicles.
    pub fleet_ttc_s: f64,
    /// `ttc_w·fleet_ttc_s`.
    pub fleet_ttc: f64,
    pub extras: f64,
    pub total: f64,
}

pub fn comfort_term(accel: f64) -> f64 {
    -accel.abs()
}

/// Jerk magnitude per unit time.
pub fn jerk_term(accel: f64, accel_prev: f64, dt: f64) -> f64 {
    (accel - accel_prev).abs() / dt
}

/// Fleet minimum TTC, capped.
pub fn fleet_ttc_term(min_ttc: f64, cap: f64) -> f64 {
    min_ttc.min(cap)
}

/// Rewards for every fleet member from one post-step snapshot.
pub fn reward(
    fleet: &[FleetMember],
    min_ttc: f64,
    cfg: &RewardConfig,
    dt: f64,
) -> Result<BTreeMap<VehicleId, RewardBreakdown>, EnvError> {
    if fleet.is_empty() {
        return Err(EnvError::EmptyFleet);
    }
    let ego_terms = |m: &FleetMember| {
        let stopped = if m.speed < cfg.stop_threshold { 1.0 } else { 0.0 };
        (m.speed, cfg.stop_penalty * stopped, cfg.emission_weight * m.emission_g)
    };
    let fleet_mean = fleet
        .iter()
        .map(|m| {
            let (v, s, e) = ego_terms(m);
            v + s + e
        })
        .sum::<f64>()
        / fleet.len() as f64;
    let ttc_s = fleet_ttc_term(min_ttc, cfg.ttc_cap);
    Ok(fleet
        .iter()
        .map(|m| {
            let (velocity, stop, emission) = ego_terms(m);
            let ego = velocity + stop + emission;
            let comfort = cfg.comfort_w * comfort_term(m.accel);
            let jerk_rate = jerk_term(m.accel, m.accel_prev, dt);
            let jerk = cfg.jerk_w * -jerk_rate;
            let fleet_ttc = cfg.ttc_w * ttc_s;
            let extras = comfort + jerk + fleet_ttc;
            let b = RewardBreakdown {
                velocity,
                stop,
                emission,
                ego,
                fleet: fleet_mean,
                comfort,
                jerk_raw: (m.accel - m.accel_prev).abs(),
                jerk_rate,
                jerk,
                fleet_ttc_s: ttc_s,
                fleet_ttc,
                extras,
                total: cfg.eta * fleet_mean + (1.0 - cfg.eta) * ego + extras,
            };
            (m.id, b)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn member(id: u64, speed: f64, e: f64) -> FleetMember {
        FleetMember {
            id: VehicleId(id),
            speed,
            emission_g: e,
            accel: 0.0,
            accel_prev: 0.0,
        }
    }

    #[test]
    fn worked_example_eta_zero() {
        let cfg = RewardConfig {
            eta: 0.0,
            stop_penalty: -5.0,
            emission_weight: -0.5,
            stop_threshold: 1.0,
            ..RewardConfig::default()
        };
        let r = reward(&[member(0, 10.0, 2.0), member(1, 0.0, 1.0)], 5.0, &cfg, 0.5).unwrap();
        assert_eq!(r[&VehicleId(0)].total, 9.0);
    }

    #[test]
    fn eta_one_gives_fleet_mean() {
        let cfg = RewardConfig { eta: 1.0, ..RewardConfig::default() };
        let r = reward(&[member(0, 10.0, 2.0), member(1, 0.5, 1.0)], 5.0, &cfg, 0.5).unwrap();
        assert_eq!(r[&VehicleId(0)].total, r[&VehicleId(1)].total);
        assert_eq!(r[&VehicleId(0)].total, r[&VehicleId(0)].fleet);
    }

    #[test]
    fn empty_fleet_errors() {
        assert!(matches!(reward(&[], 1.0, &RewardConfig::default(), 0.5), Err(EnvError::EmptyFleet)));
    }

    #[test]
    fn extra_terms() {
        assert_eq!(comfort_term(0.0), 0.0);
        assert_eq!(jerk_term(1.0, -0.5, 0.5), 3.0);
        assert_eq!(fleet_ttc_term(f64::INFINITY, 20.0), 20.0);
        let cfg = RewardConfig { comfort_w: 2.0, jerk_w: 1.0, ttc_w: 0.1, ..RewardConfig::default() };
        let m = FleetMember { accel: 1.0, accel_prev: -0.5, ..member(0, 5.0, 1.0) };
        let b = reward(&[m], f64::INFINITY, &cfg, 0.5).unwrap()[&VehicleId(0)];
        assert_eq!((b.comfort, b.jerk_raw, b.jerk_rate, b.jerk), (-2.0, 1.5, 3.0, -3.0));
        assert_eq!((b.fleet_ttc_s, b.fleet_ttc), (20.0, 2.0));
        assert_eq!(b.extras, b.comfort + b.jerk + b.fleet_ttc);
    }

    fn fleet_strategy() -> impl Strategy<Value = Vec<FleetMember>> {
        prop::collection::vec((0.0f64..20.0, 0.0f64..10.0, -7.5f64..3.0, -7.5f64..3.0), 1..12).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (s, e, a, ap))| FleetMember {
                    id: VehicleId(i as u64),
                    speed: s,
                    emission_g: e,
                    accel: a,
                    accel_prev: ap,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn total_decomposes(fleet in fleet_strategy(), eta in 0.0f64..=1.0, ttc in 0.0f64..50.0) {
            let cfg = RewardConfig { eta, comfort_w: 0.3, jerk_w: 0.2, ttc_w: 0.1, ..RewardConfig::default() };
            for b in reward(&fleet, ttc, &cfg, 0.5).unwrap().values() {
                let expect = eta * b.fleet + (1.0 - eta) * b.ego + b.extras;
                prop_assert!((b.total - expect).abs() <= 1e-12);
            }
        }

        #[test]
        fn affine_in_eta(fleet in fleet_strategy(), ttc in 0.0f64..50.0) {
            let at = |eta| reward(&fleet, ttc, &RewardConfig { eta, jerk_w: 0.2, ..RewardConfig::default() }, 0.5).unwrap();
            let (r0, rh, r1) = (at(0.0), at(0.5), at(1.0));
            for id in r0.keys() {
                prop_assert!((rh[id].total - 0.5 * (r0[id].total + r1[id].total)).abs() <= 1e-12);
            }
        }

        #[test]
        fn single_vehicle_ignores_eta(m in fleet_strategy().prop_map(|v| v[0]), eta in 0.0f64..=1.0) {
            let base = reward(&[m], 10.0, &RewardConfig { eta: 0.0, ..RewardConfig::default() }, 0.5).unwrap();
            let other = reward(&[m], 10.0, &RewardConfig { eta, ..RewardConfig::default() }, 0.5).unwrap();
            prop_assert!((base[&m.id].total - other[&m.id].total).abs() <= 1e-12);
        }
    }
}
