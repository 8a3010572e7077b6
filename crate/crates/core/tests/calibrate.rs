use std::collections::BTreeMap;

use ecozoo::calibrate::{
    fit_population, ks_two_sample, log_likelihood, predict_next_speed, sample_posterior, synthetic_dataset,
    CalibrationError, CalibrationPrior, ChainConfig, DriverTrajectory, TrajectoryDataset, Transition,
};
use ecozoo::sim::rng::{stream, StreamId};
use ecozoo::sim::trace::TraceWriter;
use ecozoo::sim::{DriverModel, VehicleClass};

const THETA: [f64; 5] = [12.0, 2.5, 1.2, 1.2, 1.8];

fn synthetic(theta: &[f64; 5], n: usize, class: VehicleClass, seed: u64) -> TrajectoryDataset {
    let mut rng = stream(seed, StreamId::Other(50));
    synthetic_dataset(theta, 0.1, n, 0.5, class, &mut rng)
}

fn quick_chains(seed: u64) -> ChainConfig {
    ChainConfig { warmup: 2000, samples: 1500, ..ChainConfig::new(seed) }
}

#[test]
fn synthetic_recovery_within_fifteen_percent() {
    let data = synthetic(&THETA, 5000, VehicleClass::Car, 1);
    let post = sample_posterior(&CalibrationPrior::default(), &data, &quick_chains(2)).unwrap();
    let mean = post.mean();
    for k in 0..5 {
        let rel = (mean[k] - THETA[k]).abs() / THETA[k];
        assert!(rel <= 0.15, "component {k}: {} vs {}", mean[k], THETA[k]);
    }
    assert!((0.15..=0.5).contains(&post.acceptance_rate), "acceptance {}", post.acceptance_rate);
    assert!(post.draws().iter().all(|d| d.iter().all(|x| *x > 0.0)));
}

#[test]
fn empty_data_returns_the_prior() {
    let prior = CalibrationPrior::default();
    let post = sample_posterior(&prior, &TrajectoryDataset::empty(0.5), &ChainConfig::new(9)).unwrap();
    let (m, se) = (post.mean_ln(), post.mcse_ln());
    let target = prior.means();
    for k in 0..6 {
        assert!((m[k] - target[k]).abs() <= 3.0 * se[k], "component {k}: z = {}", (m[k] - target[k]) / se[k]);
    }
}

fn one_transition() -> TrajectoryDataset {
    let theta = [15.0, 2.0, 1.5, 1.5, 2.0];
    let t = Transition { gap: 20.0, speed: 10.0, speed_delta: 1.0, next_speed: 0.0 };
    let next = predict_next_speed(&theta, &t, 0.5) + 0.04;
    TrajectoryDataset {
        dt: 0.5,
        drivers: vec![DriverTrajectory {
            driver: "d0".into(),
            class: VehicleClass::Car,
            transitions: vec![Transition { next_speed: next, ..t }],
        }],
    }
}

#[test]
fn two_parameter_slice_matches_dense_grid() {
    let prior = CalibrationPrior::default();
    let data = one_transition();
    let init = [15.0, 2.0, 1.5, 1.5, 2.0, 0.3];
    let cfg = ChainConfig {
        free: [true, false, true, false, false, false],
        init: Some(init),
        warmup: 3000,
        samples: 6000,
        ..ChainConfig::new(21)
    };
    let post = sample_posterior(&prior, &data, &cfg).unwrap();

    // Unnormalized posterior over (ln v0, ln T) with everything else fixed.
    let (mu, sd) = (prior.means(), prior.scales());
    let n = 401;
    let axis = |k: usize| -> Vec<f64> { (0..n).map(|i| mu[k] - 6.0 * sd[k] + 12.0 * sd[k] * i as f64 / (n - 1) as f64).collect() };
    let (g0, g2) = (axis(0), axis(2));
    let mut logp = Vec::with_capacity(n * n);
    for &z0 in &g0 {
        for &z2 in &g2 {
            let theta = [z0.exp(), init[1], z2.exp(), init[3], init[4]];
            let prior_term = -0.5 * ((z0 - mu[0]) / sd[0]).powi(2) - 0.5 * ((z2 - mu[2]) / sd[2]).powi(2);
            logp.push(prior_term + log_likelihood(&theta, init[5], &data));
        }
    }
    let top = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let (mut m0, mut m2, mut below) = (0.0, 0.0, 0.0);
    for (i, &z0) in g0.iter().enumerate() {
        for (j, &z2) in g2.iter().enumerate() {
            let p = w[i * n + j] / total;
            m0 += p * z0;
            m2 += p * z2;
            if z0 < mu[0] {
                below += p;
            }
        }
    }
    let (m, se) = (post.mean_ln(), post.mcse_ln());
    assert!((m[0] - m0).abs() <= 4.0 * se[0] + 1e-3, "ln v0: chain {} grid {m0}", m[0]);
    assert!((m[2] - m2).abs() <= 4.0 * se[2] + 1e-3, "ln T: chain {} grid {m2}", m[2]);
    // Probability mass below the prior mean, against its Monte Carlo error.
    let draws: Vec<f64> = post.chains.iter().flatten().map(|z| z[0]).collect();
    let frac = draws.iter().filter(|z| **z < mu[0]).count() as f64 / draws.len() as f64;
    let mc = (below * (1.0 - below) / post.ess[0]).sqrt();
    assert!((frac - below).abs() <= 4.0 * mc + 1e-3, "P(ln v0 < mu): chain {frac} grid {below}");
    // Fixed coordinates never move.
    assert!(post.chains.iter().flatten().all(|z| z[1] == init[1].ln() && z[5] == init[5].ln()));
}

fn thinned(post: &ecozoo::calibrate::PosteriorSample, k: usize, keep: usize) -> Vec<f64> {
    let all: Vec<f64> = post.chains.iter().flatten().map(|z| z[k]).collect();
    let step = (all.len() / keep).max(1);
    all.into_iter().step_by(step).collect()
}

#[test]
fn identical_classes_are_indistinguishable() {
    let car = synthetic(&THETA, 2000, VehicleClass::Car, 3);
    let mut truck = car.clone();
    for d in &mut truck.drivers {
        d.class = VehicleClass::TruckBus;
    }
    let sets = BTreeMap::from([("car".to_string(), car), ("truck_bus".to_string(), truck)]);
    let fit = fit_population(&sets, &CalibrationPrior::default(), &quick_chains(4)).unwrap();
    let (a, b) = (fit.classes[0].posterior.as_ref().unwrap(), fit.classes[1].posterior.as_ref().unwrap());
    for k in 0..6 {
        let keep = a.ess[k].min(b.ess[k]).max(20.0) as usize;
        let (_, p) = ks_two_sample(&thinned(a, k, keep), &thinned(b, k, keep));
        assert!(p > 0.01, "marginal {k}: p = {p}");
    }
}

#[test]
fn distinct_classes_separate_on_desired_speed() {
    let car = synthetic(&THETA, 2000, VehicleClass::Car, 5);
    let heavy_theta = [20.0, 3.5, 1.8, 0.8, 1.5];
    let truck = synthetic(&heavy_theta, 2000, VehicleClass::TruckBus, 6);
    let sets = BTreeMap::from([("car".to_string(), car), ("truck_bus".to_string(), truck)]);
    let fit = fit_population(&sets, &CalibrationPrior::default(), &quick_chains(7)).unwrap();
    let q = |fit: &ecozoo::calibrate::ClassFit| (fit.summary[0].q05, fit.summary[0].q95);
    let (car_q, truck_q) = (q(&fit.classes[0]), q(&fit.classes[1]));
    assert!(car_q.1 < truck_q.0, "car {car_q:?} truck {truck_q:?}");
    // The fitted population hands drivers the posterior draws.
    let pop = fit.driver_population();
    match pop.model(VehicleClass::TruckBus) {
        DriverModel::Empirical { .. } => {}
        other => panic!("expected empirical draws, got {other:?}"),
    }
}

#[test]
fn empty_class_falls_back_to_defaults() {
    let sets = BTreeMap::from([
        ("car".to_string(), synthetic(&THETA, 500, VehicleClass::Car, 8)),
        ("truck_bus".to_string(), TrajectoryDataset::empty(0.5)),
    ]);
    let fit = fit_population(&sets, &CalibrationPrior::default(), &ChainConfig { warmup: 500, samples: 200, ..ChainConfig::new(1) }).unwrap();
    let truck = fit.classes.iter().find(|c| c.class == VehicleClass::TruckBus).unwrap();
    assert!(truck.defaults_used && truck.posterior.is_none());
    let bad = BTreeMap::from([("bicycle".to_string(), TrajectoryDataset::empty(0.5))]);
    assert!(matches!(
        fit_population(&bad, &CalibrationPrior::default(), &ChainConfig::new(1)),
        Err(CalibrationError::UnknownClass(_))
    ));
}

#[test]
fn trace_export_round_trips_into_transitions() {
    use ecozoo::emissions::EmissionCoefficients;
    use ecozoo::env::{Env, EpisodeSpec};
    let ctx = ecozoo::context::load_dataset(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/scenarios/reference.jsonl"),
    )
    .unwrap()
    .remove(0);
    let mut spec = EpisodeSpec::new(ctx, 3);
    spec.sim.horizon = 300;
    let (mut env, _) = Env::reset_with_control(spec, EmissionCoefficients::default(), false).unwrap();
    let mut w = TraceWriter::new(Vec::new());
    w.record(env.state()).unwrap();
    while !env.is_done() {
        env.step(&BTreeMap::new()).unwrap();
        w.record(env.state()).unwrap();
    }
    let bytes = w.finish().unwrap();
    let rows = ecozoo::sim::trace::read_rows(bytes.as_slice()).unwrap();
    let data = TrajectoryDataset::from_trace_rows(&rows).unwrap();
    assert!(data.len() > 100);
    assert!((data.dt - 0.5).abs() < 1e-12);
    data.validate().unwrap();
}
