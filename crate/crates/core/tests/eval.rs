mod common;

use std::collections::BTreeMap;

use common::*;
use ecozoo::emissions::EmissionCoefficients;
use ecozoo::env::{Env, EpisodeSpec};
use ecozoo::eval::{
    benefit, benefits, episode_cost, histogram, run_campaign, run_episode, Campaign, ControllerSpec, EpisodeMetrics,
};
use ecozoo::sim::rng::{derive_seed, stream, StreamId};
use ecozoo::sim::trace::TraceWriter;

fn paired(spec: &EpisodeSpec, controller: &ControllerSpec) -> (EpisodeMetrics, EpisodeMetrics) {
    let coeffs = EmissionCoefficients::default();
    let base = run_episode(spec, None, &coeffs).unwrap();
    let mut c = controller.build(spec.seed);
    let policy = run_episode(spec, Some(c.as_mut()), &coeffs).unwrap();
    (policy, base)
}

fn table4_context(k: u64) -> ecozoo::context::ContextVector {
    let mut rng = stream(derive_seed(31, k), StreamId::Other(1));
    ecozoo::context::sample_context(&table4(), &mut rng).unwrap()
}

#[test]
fn mimic_reproduces_the_baseline() {
    for k in 0..8 {
        let spec = EpisodeSpec::new(table4_context(k), k);
        let (p, b) = paired(&spec, &ControllerSpec::IdmMimic);
        assert_eq!(p.throughput, b.throughput);
        let (rec, _) = benefits("mimic", &p, &b, &[k]).unwrap();
        assert!(rec.emission_benefit_pct.abs() <= 0.5, "context {k}: {}", rec.emission_benefit_pct);
        assert_eq!(rec.throughput_change_pct, 0.0);
    }
}

#[test]
fn paired_runs_share_the_warmup() {
    let spec = EpisodeSpec::new(reference_context(), 12);
    let coeffs = EmissionCoefficients::default();
    let (human, _) = Env::reset_with_control(spec.clone(), coeffs.clone(), false).unwrap();
    let (policy, _) = Env::reset_with_control(spec, coeffs, true).unwrap();
    let dump = |env: &Env| {
        let mut w = TraceWriter::new(Vec::new());
        w.record(env.state()).unwrap();
        w.finish().unwrap()
    };
    assert_eq!(dump(&human), dump(&policy));
    assert_eq!(human.records(), policy.records());
}

#[test]
fn throttling_is_zeroed() {
    let spec = EpisodeSpec::new(reference_context(), 5);
    let (p, b) = paired(&spec, &ControllerSpec::Throttled { max_speed: 3.0 });
    assert!(p.throughput < b.throughput);
    let (rec, approaches) = benefits("throttled", &p, &b, &[5]).unwrap();
    assert!(rec.zeroed);
    assert_eq!(rec.emission_benefit_pct, 0.0);
    for r in approaches.into_iter().flatten() {
        assert!(r.zeroed);
        assert_eq!(r.emission_benefit_pct, 0.0);
    }
}

#[test]
fn glide_to_green_cuts_emission_without_losing_throughput() {
    let ctx = reference_context();
    let runs: Vec<_> = (0..4).map(|k| paired(&EpisodeSpec::new(ctx.clone(), derive_seed(ctx.seed, k)), &ControllerSpec::GlideToGreen)).collect();
    let p = EpisodeMetrics::pooled(&runs.iter().map(|r| r.0.clone()).collect::<Vec<_>>()).unwrap();
    let b = EpisodeMetrics::pooled(&runs.iter().map(|r| r.1.clone()).collect::<Vec<_>>()).unwrap();
    let bn = benefit(&p.intersection(), &b.intersection()).unwrap();
    assert!(bn.raw_emission_benefit_pct > 0.0, "benefit {}", bn.raw_emission_benefit_pct);
    assert!(bn.throughput_change_pct >= 0.0, "throughput {}", bn.throughput_change_pct);
}

#[test]
fn cost_counts_only_post_warmup_entrants() {
    let spec = EpisodeSpec::new(reference_context(), 3);
    let (_, b) = paired(&spec, &ControllerSpec::IdmMimic);
    let by_hand: f64 = b.vehicles.iter().map(|v| v.emission_g + 0.1 * v.travel_time_s).sum();
    assert!((episode_cost(&b, 0.1) - by_hand).abs() < 1e-9);
    assert!(b.throughput <= b.spawned);
}

#[test]
fn histogram_keeps_every_record() {
    let mut rng = stream(4, StreamId::Other(9));
    let values: Vec<f64> = (0..500).map(|_| rand::Rng::random_range(&mut rng, -23.0..41.0)).collect();
    for width in [0.5, 2.5, 5.0, 17.0] {
        let bins = histogram(&values, width);
        assert_eq!(bins.iter().map(|b| b.count).sum::<u64>(), 500);
        for pair in bins.windows(2) {
            assert_eq!(pair[0].bin_high, pair[1].bin_low);
        }
    }
}

fn small_campaign(dir: &std::path::Path) -> Campaign {
    let dist = data_dir().join("distributions/table4.toml");
    let text = format!(
        r#"
        name = "determinism"
        seed = 17
        contexts = 6
        seeds_per_context = 2
        controller = {{ kind = "glide_to_green" }}
        [cmdp]
        name = "table4"
        source = {{ procedural = "{}" }}
        [protocol]
        kind = "iid"
        [episode.sim]
        horizon = 400
        "#,
        dist.display()
    );
    Campaign::from_toml_str(&text, dir).unwrap()
}

#[test]
fn reports_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let campaign = small_campaign(dir.path());
    let one = run_campaign(&campaign, 1).unwrap().to_json();
    let four = run_campaign(&campaign, 4).unwrap().to_json();
    assert_eq!(one, four);
    assert_eq!(one, run_campaign(&campaign, 1).unwrap().to_json());
}

#[test]
fn traces_repeat_byte_for_byte() {
    let run = || {
        let spec = EpisodeSpec::new(table4_context(2), 77);
        let (mut env, mut obs) = Env::reset(spec, EmissionCoefficients::default()).unwrap();
        let mut c = ControllerSpec::Random.build(77);
        let mut w = TraceWriter::new(Vec::new());
        while !env.is_done() {
            let a = c.act(&env, &obs).unwrap();
            obs = env.step(&a).unwrap().observations;
            w.record(env.state()).unwrap();
        }
        w.finish().unwrap()
    };
    let first = run();
    assert!(!first.is_empty());
    assert_eq!(first, run());
}

#[test]
fn empty_actions_for_human_fleet() {
    let mut spec = EpisodeSpec::new(reference_context(), 1);
    spec.sim.horizon = 120;
    let coeffs = EmissionCoefficients::default();
    let (mut env, _) = Env::reset_with_control(spec, coeffs, false).unwrap();
    while !env.is_done() {
        assert!(env.step(&BTreeMap::new()).unwrap().rewards.is_empty());
    }
}
