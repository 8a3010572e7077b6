mod common;

use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use common::*;
use ecozoo::emissions::{co2_rate, vsp, EmissionCoefficients, EmissionContext};
use ecozoo::env::{
    jerk_term, layout, reward, Env, EnvError, EpisodeSpec, FleetMember, RewardConfig, OBS_DIM, SENSING_CAP,
};
use ecozoo::sim::{AgeBand, Fuel, VehicleClass, VehicleId};

fn member(id: u64, speed: f64, e: f64) -> FleetMember {
    FleetMember { id: VehicleId(id), speed, emission_g: e, accel: 0.0, accel_prev: 0.0 }
}

#[test]
fn reward_worked_example() {
    let cfg = RewardConfig {
        eta: 0.0,
        stop_penalty: -5.0,
        emission_weight: -0.5,
        stop_threshold: 1.0,
        ..RewardConfig::default()
    };
    let r = reward(&[member(0, 10.0, 2.0), member(1, 0.0, 9.0)], 5.0, &cfg, 0.5).unwrap();
    assert_abs_diff_eq!(r[&VehicleId(0)].total, 9.0, epsilon = 1e-12);
}

#[test]
fn jerk_worked_example() {
    assert_abs_diff_eq!(jerk_term(1.0, -0.5, 0.5), 3.0, epsilon = 1e-12);
}

#[test]
fn vsp_and_rate_hand_values() {
    let c = EmissionCoefficients::default();
    assert_abs_diff_eq!(vsp(10.0, 0.0, 0.0, &c), 10.0 * 0.132 + 0.000302 * 1000.0, epsilon = 1e-12);
    let ctx = EmissionContext::reference(VehicleClass::Car, Fuel::Ice, AgeBand(1));
    let expected = c.idle_rate + c.vsp_slope * (15.0 * (1.1 * 1.0 + 0.132) + 0.000302 * 15.0f64.powi(3));
    assert_abs_diff_eq!(co2_rate(15.0, 1.0, &ctx, &c).unwrap(), expected, epsilon = 1e-12);
    let ev = EmissionContext::reference(VehicleClass::Car, Fuel::Ev, AgeBand(1));
    assert_eq!(co2_rate(15.0, 1.0, &ev, &c).unwrap(), 0.0);
}

fn fleet() -> impl Strategy<Value = Vec<FleetMember>> {
    prop::collection::vec((0.0f64..25.0, 0.0f64..20.0), 1..8).prop_map(|xs| {
        xs.into_iter().enumerate().map(|(i, (v, e))| member(i as u64, v, e)).collect()
    })
}

proptest! {
    #[test]
    fn single_vehicle_reward_is_eta_invariant(v in 0.0f64..25.0, e in 0.0f64..20.0, eta in 0.0f64..=1.0) {
        let base = reward(&[member(0, v, e)], 3.0, &RewardConfig { eta: 0.0, ..RewardConfig::default() }, 0.5).unwrap();
        let other = reward(&[member(0, v, e)], 3.0, &RewardConfig { eta, ..RewardConfig::default() }, 0.5).unwrap();
        prop_assert!((base[&VehicleId(0)].total - other[&VehicleId(0)].total).abs() <= 1e-12);
    }

    #[test]
    fn reward_is_affine_in_eta(f in fleet(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let at = |eta: f64| reward(&f, 4.0, &RewardConfig { eta, ..RewardConfig::default() }, 0.5).unwrap();
        let (ra, rb, rm) = (at(a), at(b), at(0.5 * (a + b)));
        for id in ra.keys() {
            let mid = 0.5 * (ra[id].total + rb[id].total);
            prop_assert!((rm[id].total - mid).abs() <= 1e-12);
        }
    }
}

fn reference_spec(seed: u64) -> EpisodeSpec {
    let mut spec = EpisodeSpec::new(reference_context(), seed);
    spec.sim.horizon = 200;
    spec
}

#[test]
fn zero_adoption_has_no_agents() {
    let mut spec = reference_spec(1);
    spec.context.adoption_level = 0.0;
    let (mut env, obs) = Env::reset(spec, EmissionCoefficients::default()).unwrap();
    assert!(obs.is_empty());
    while !env.is_done() {
        let r = env.step(&BTreeMap::new()).unwrap();
        assert!(r.observations.is_empty() && r.rewards.is_empty());
    }
    assert!(matches!(env.step(&BTreeMap::new()), Err(EnvError::Done)));
}

#[test]
fn flat_observations_follow_the_layout() {
    let fields = layout();
    assert_eq!(fields.iter().map(|f| f.width).sum::<usize>(), OBS_DIM);
    let (_, obs) = Env::reset(reference_spec(2), EmissionCoefficients::default()).unwrap();
    assert!(!obs.is_empty());
    for o in obs.values() {
        let flat = o.to_flat();
        assert_eq!(flat.len(), OBS_DIM);
        assert!(flat.iter().all(|x| x.is_finite()));
        let at = |name: &str| flat[fields.iter().find(|f| f.name == name).expect("field exists").offset];
        assert_eq!(at("ego.speed"), o.ego.speed);
        assert_eq!(at("ego.distance_to_signal"), o.ego.distance_to_signal);
        assert_eq!(at("context.speed_limit"), o.context.speed_limit);
        for f in fields.iter().filter(|f| f.name.ends_with("relative_distance")) {
            assert!(flat[f.offset].abs() <= SENSING_CAP);
        }
    }
}

#[test]
fn rewards_decompose_during_a_rollout() {
    let spec = reference_spec(3);
    let eta = spec.reward.eta;
    let (mut env, mut obs) = Env::reset(spec, EmissionCoefficients::default()).unwrap();
    while !env.is_done() {
        let actions = obs.keys().map(|&id| (id, 0.5)).collect();
        let r = env.step(&actions).unwrap();
        assert_eq!(r.rewards.keys().collect::<Vec<_>>(), r.info.applied.keys().collect::<Vec<_>>());
        for b in r.rewards.values() {
            assert_abs_diff_eq!(b.total, eta * b.fleet + (1.0 - eta) * b.ego + b.extras, epsilon = 1e-12);
        }
        for (id, a) in &r.info.applied {
            assert!(*a <= 0.5 + 1e-12, "vehicle {id} applied {a}");
        }
        obs = r.observations;
    }
}

#[test]
fn bad_actions_are_rejected() {
    let (mut env, obs) = Env::reset(reference_spec(4), EmissionCoefficients::default()).unwrap();
    let id = *obs.keys().next().expect("reference scenario has agents");
    assert!(matches!(env.step(&BTreeMap::new()), Err(EnvError::MissingAction(m)) if obs.contains_key(&m)));
    let mut actions: BTreeMap<_, _> = obs.keys().map(|&k| (k, 0.0)).collect();
    actions.insert(VehicleId(u64::MAX), 0.0);
    assert!(matches!(env.step(&actions), Err(EnvError::UnknownVehicle(_))));
    let mut actions: BTreeMap<_, _> = obs.keys().map(|&k| (k, 0.0)).collect();
    actions.insert(id, f64::NAN);
    assert!(env.step(&actions).is_err());
}

#[test]
fn invalid_specs_fail_at_reset() {
    let mut spec = reference_spec(5);
    spec.sim.warmup = spec.sim.horizon;
    assert!(Env::reset(spec, EmissionCoefficients::default()).is_err());
    let mut spec = reference_spec(5);
    spec.reward.eta = 1.5;
    assert!(Env::reset(spec, EmissionCoefficients::default()).is_err());
}
