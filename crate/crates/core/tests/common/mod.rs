//! Helpers shared by the integration suites and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use ecozoo::context::{load_dataset, ContextVector, FeatureDistribution};
use ecozoo::emissions::EmissionCoefficients;
use ecozoo::env::{Env, EnvError, EpisodeSpec};
use ecozoo::sim::rng::{stream, StreamId};
use ecozoo::sim::{
    Approach, DriverPopulation, FleetMix, IdmParams, IntersectionTopology, Phase, Scenario, SignalPlan, SimConfig,
    SimState, VehicleId,
};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn table4() -> FeatureDistribution {
    FeatureDistribution::load(&data_dir().join("distributions/table4.toml")).expect("table4 loads")
}

pub fn table5() -> FeatureDistribution {
    FeatureDistribution::load(&data_dir().join("distributions/table5.toml")).expect("table5 loads")
}

pub fn reference_context() -> ContextVector {
    load_dataset(&data_dir().join("scenarios/reference.jsonl"))
        .expect("reference dataset loads")
        .remove(0)
}

/// Single approach, single lane, permanently green, no arrivals.
pub fn open_road(lane_length: f64, speed_limit: f64) -> Scenario {
    Scenario {
        id: "open-road".into(),
        topology: IntersectionTopology::new(vec![Approach::new(1, lane_length, speed_limit, vec![0])]),
        plan: SignalPlan {
            phases: vec![Phase {
                green_s: 100.0,
                yellow_s: 0.0,
                red_clearance_s: 0.0,
                served_approaches: vec![0],
            }],
            offset_s: 0.0,
        },
        inflows: vec![0.0],
        fleet: FleetMix::default(),
        adoption_level: 0.0,
        seed: 1,
    }
}

pub fn empty_state(scenario: Scenario) -> SimState {
    SimState::new(SimConfig::default(), scenario, DriverPopulation::default()).expect("valid scenario")
}

/// Scalar IDM acceleration, written from the model equations alone.
pub fn scalar_idm(v: f64, gap: f64, dv: f64, p: &IdmParams) -> f64 {
    let s_star = p.gap_min + (v * p.headway_time + v * dv / (2.0 * (p.accel_max * p.decel_comf).sqrt())).max(0.0);
    let interaction = if gap.is_infinite() { 0.0 } else { (s_star / gap).powi(2) };
    p.accel_max * (1.0 - (v / p.v_desired).powf(p.accel_exp) - interaction)
}

/// One explicit step: clamped Euler speed, trapezoidal position.
pub fn scalar_step(x: f64, v: f64, a: f64, dt: f64) -> (f64, f64) {
    let v1 = (v + a * dt).max(0.0);
    (x + 0.5 * (v + v1) * dt, v1)
}

/// Largest per-step position and speed deviation between the kernel and the
/// scalar oracle for a two-vehicle run.
pub fn idm_fidelity_error(steps: usize) -> f64 {
    let p_lead = IdmParams { v_desired: 14.0, ..IdmParams::default() };
    let p_follow = IdmParams { v_desired: 16.0, headway_time: 1.2, ..IdmParams::default() };
    let mut s = empty_state(open_road(10_000.0, 20.0));
    let lead = s
        .insert_vehicle(0, 0, 60.0, 8.0, ecozoo::sim::VehicleClass::Car, p_lead, false, ecozoo::sim::Turn::Straight)
        .unwrap();
    let follow = s
        .insert_vehicle(0, 0, 20.0, 12.0, ecozoo::sim::VehicleClass::Car, p_follow, false, ecozoo::sim::Turn::Straight)
        .unwrap();
    let len = ecozoo::sim::VehicleClass::Car.length();
    let dt = s.config().dt;
    let (mut xl, mut vl, mut xf, mut vf) = (60.0, 8.0, 20.0, 12.0);
    let mut worst: f64 = 0.0;
    let none = BTreeMap::new();
    for _ in 0..steps {
        let al = scalar_idm(vl, f64::INFINITY, 0.0, &p_lead);
        let af = scalar_idm(vf, xl - len - xf, vf - vl, &p_follow);
        (xl, vl) = scalar_step(xl, vl, al, dt);
        (xf, vf) = scalar_step(xf, vf, af, dt);
        s.advance(&none).unwrap();
        let (kl, kf) = (s.vehicle(lead).unwrap(), s.vehicle(follow).unwrap());
        for d in [kl.pos - xl, kl.speed - vl, kf.pos - xf, kf.speed - vf] {
            worst = worst.max(d.abs());
        }
    }
    worst
}

/// Steps a 10-vehicle platoon needs until every |accel| < 1e-3, if it
/// settles within `max_steps`.
pub fn platoon_settling_steps(max_steps: u64) -> Option<u64> {
    let mut s = empty_state(open_road(20_000.0, 20.0));
    let p = IdmParams::default();
    for k in 0..10 {
        s.insert_vehicle(0, 0, 400.0 - 25.0 * k as f64, 10.0, ecozoo::sim::VehicleClass::Car, p, false, ecozoo::sim::Turn::Straight)
            .unwrap();
    }
    let none = BTreeMap::new();
    for step in 1..=max_steps {
        s.advance(&none).unwrap();
        if s.vehicles().all(|v| v.accel.abs() < 1e-3) {
            return Some(step);
        }
    }
    None
}

/// Drive one episode with uniform random actions passed through the safety
/// clamp, checking conservation at every step. Returns the peak number of
/// vehicles present.
pub fn random_safe_episode(spec: EpisodeSpec, action_seed: u64) -> Result<usize, String> {
    let coeffs = EmissionCoefficients::default();
    let bounds = spec.sim.accel_bounds;
    let (mut env, mut obs) = Env::reset(spec, coeffs).map_err(|e| e.to_string())?;
    let mut rng = stream(action_seed, StreamId::Controller);
    let mut peak = env.state().vehicle_count();
    while !env.is_done() {
        let actions: BTreeMap<VehicleId, f64> = obs
            .keys()
            .map(|&id| {
                let raw = rng.random_range(bounds[0]..=bounds[1]);
                Ok::<_, EnvError>((id, env.safety_clamp(id, raw)?))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        obs = env.step(&actions).map_err(|e| e.to_string())?.observations;
        let st = env.state();
        if st.spawned() != st.exited() + st.vehicle_count() as u64 {
            return Err(format!(
                "conservation broken at step {}: spawned {} exited {} present {}",
                st.step_count(),
                st.spawned(),
                st.exited(),
                st.vehicle_count()
            ));
        }
        peak = peak.max(st.vehicle_count());
    }
    Ok(peak)
}
