//! Episode metrics, benefits against the human baseline and evaluation
//! campaigns.
//!
//! Per-vehicle figures count only vehicles that entered after warmup; the
//! ones already present when warmup ends have truncated histories.

mod campaign;
mod controller;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextError;
use crate::emissions::{EmissionCoefficients, EmissionError};
use crate::env::{Env, EnvError, EpisodeSpec};

pub use campaign::{
    histogram, run_campaign, summarize, Campaign, CampaignSpec, CmdpSpec, ContextSource, EpisodeOverrides, EvalReport,
    HistogramBin, IntersectionRecord, Protocol, SkippedRecord, Summary,
};
pub use controller::{
    glide_target_speed, Controller, ControllerSpec, GlideToGreen, IdmMimic, RandomAccel, Throttled,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("benefit undefined: {0}")]
    UndefinedBenefit(String),
    #[error("invalid campaign: {0}")]
    InvalidCampaign(String),
    #[error("cannot parse campaign: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Emission(#[from] EmissionError),
}

/// Trip of one post-warmup entrant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMetrics {
    pub approach: usize,
    /// Grams emitted while in the network.
    pub emission_g: f64,
    /// Time in the network (s), up to the horizon for unfinished trips.
    pub travel_time_s: f64,
    pub completed: bool,
}

/// Per-approach aggregates; they add up across paired seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApproachMetrics {
    /// Post-warmup entrants.
    pub entered: u64,
    /// Post-warmup entrants that left before the horizon.
    pub completed: u64,
    /// Emission of the completed trips (g).
    pub completed_emission_g: f64,
    pub completed_travel_time_s: f64,
    /// Emission of all post-warmup entrants, finished or not (g).
    pub emission_g: f64,
    /// Vehicle-steps of all post-warmup entrants.
    pub vehicle_steps: u64,
    /// Vehicles of this approach that exited after warmup.
    pub throughput: u64,
}

impl ApproachMetrics {
    fn add(&mut self, o: &ApproachMetrics) {
        self.entered += o.entered;
        self.completed += o.completed;
        self.completed_emission_g += o.completed_emission_g;
        self.completed_travel_time_s += o.completed_travel_time_s;
        self.emission_g += o.emission_g;
        self.vehicle_steps += o.vehicle_steps;
        self.throughput += o.throughput;
    }

    /// Mean emission per completed trip (g/vehicle).
    pub fn per_vehicle_g(&self) -> Option<f64> {
        (self.completed > 0).then(|| self.completed_emission_g / self.completed as f64)
    }

    /// Mean emission per vehicle-step (g).
    pub fn per_vehicle_step_g(&self) -> Option<f64> {
        (self.vehicle_steps > 0).then(|| self.emission_g / self.vehicle_steps as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub dt: f64,
    /// Episodes pooled into this value.
    pub episodes: u64,
    pub vehicles: Vec<VehicleMetrics>,
    pub approaches: Vec<ApproachMetrics>,
    pub spawned: u64,
    /// Exits after warmup, all approaches.
    pub throughput: u64,
    /// Fleet emission over the whole episode, warmup included (g).
    pub total_emission_g: f64,
    /// Smallest time-to-collision after warmup (s).
    pub min_ttc_s: f64,
    pub mean_abs_accel: f64,
    /// Mean `|Δa|/Δt` per vehicle-step (m/s³).
    pub mean_jerk: f64,
    pub simulated_steps: u64,
}

impl EpisodeMetrics {
    pub fn from_env(env: &Env) -> Self {
        let sim = &env.spec().sim;
        let dt = sim.dt;
        let end = env.state().step_count();
        let n = env.state().topology().approaches.len();
        let mut approaches = vec![ApproachMetrics::default(); n];
        let mut vehicles = Vec::new();
        let (mut abs_sum, mut jerk_sum, mut steps) = (0.0, 0.0, 0u64);
        for r in env.records().values() {
            abs_sum += r.abs_accel_sum;
            jerk_sum += r.jerk_sum;
            steps += r.steps;
            if let Some(exit) = r.exit_step {
                if exit > sim.warmup {
                    approaches[r.approach].throughput += 1;
                }
            }
            if r.spawn_step <= sim.warmup {
                continue;
            }
            let completed = r.exit_step.is_some();
            let travel = (r.exit_step.unwrap_or(end) - r.spawn_step) as f64 * dt;
            let a = &mut approaches[r.approach];
            a.entered += 1;
            a.emission_g += r.emission_g;
            a.vehicle_steps += r.steps;
            if completed {
                a.completed += 1;
                a.completed_emission_g += r.emission_g;
                a.completed_travel_time_s += travel;
            }
            vehicles.push(VehicleMetrics {
                approach: r.approach,
                emission_g: r.emission_g,
                travel_time_s: travel,
                completed,
            });
        }
        let mean = |x: f64| if steps == 0 { 0.0 } else { x / steps as f64 };
        Self {
            dt,
            episodes: 1,
            vehicles,
            approaches,
            spawned: env.state().spawned(),
            throughput: env.throughput(),
            total_emission_g: env.total_emission_g(),
            min_ttc_s: env.min_ttc_seen(),
            mean_abs_accel: mean(abs_sum),
            mean_jerk: mean(jerk_sum),
            simulated_steps: end,
        }
    }

    /// Pool several paired-seed episodes of one context.
    pub fn pooled(episodes: &[EpisodeMetrics]) -> Option<Self> {
        let (first, rest) = episodes.split_first()?;
        let mut out = first.clone();
        let mut weighted = (first.mean_abs_accel * first.episodes as f64, first.mean_jerk * first.episodes as f64);
        for e in rest {
            out.episodes += e.episodes;
            out.vehicles.extend(e.vehicles.iter().cloned());
            for (a, b) in out.approaches.iter_mut().zip(&e.approaches) {
                a.add(b);
            }
            out.spawned += e.spawned;
            out.throughput += e.throughput;
            out.total_emission_g += e.total_emission_g;
            out.min_ttc_s = out.min_ttc_s.min(e.min_ttc_s);
            weighted.0 += e.mean_abs_accel * e.episodes as f64;
            weighted.1 += e.mean_jerk * e.episodes as f64;
            out.simulated_steps += e.simulated_steps;
        }
        out.mean_abs_accel = weighted.0 / out.episodes as f64;
        out.mean_jerk = weighted.1 / out.episodes as f64;
        Some(out)
    }

    /// Intersection-wide aggregate of the approach records.
    pub fn intersection(&self) -> ApproachMetrics {
        let mut total = ApproachMetrics::default();
        for a in &self.approaches {
            total.add(a);
        }
        total
    }
}

/// `Σ_i (emission_i + λ·T_i)` over post-warmup entrants.
pub fn episode_cost(metrics: &EpisodeMetrics, lambda: f64) -> f64 {
    metrics
        .vehicles
        .iter()
        .map(|v| v.emission_g + lambda * v.travel_time_s)
        .sum()
}

/// Benefit of a policy over the baseline for one aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Benefit {
    /// `100·(base − policy)/base` on g per completed trip, before zeroing.
    pub raw_emission_benefit_pct: f64,
    /// Same on g per vehicle-step.
    pub per_step_emission_benefit_pct: f64,
    pub throughput_change_pct: f64,
    /// Policy throughput below the baseline's.
    pub throughput_loss: bool,
}

fn pct_change(base: f64, policy: f64) -> f64 {
    100.0 * (base - policy) / base
}

/// Raw benefit figures for one aggregate. Errors if the baseline emits
/// nothing per vehicle or has no throughput to compare against.
pub fn benefit(policy: &ApproachMetrics, baseline: &ApproachMetrics) -> Result<Benefit, EvalError> {
    let base_g = baseline
        .per_vehicle_g()
        .filter(|g| *g > 0.0)
        .ok_or_else(|| EvalError::UndefinedBenefit("baseline per-vehicle emission is zero".into()))?;
    let policy_g = policy
        .per_vehicle_g()
        .ok_or_else(|| EvalError::UndefinedBenefit("policy completed no post-warmup trips".into()))?;
    let per_step = match (baseline.per_vehicle_step_g(), policy.per_vehicle_step_g()) {
        (Some(b), Some(p)) if b > 0.0 => pct_change(b, p),
        _ => 0.0,
    };
    let throughput_change_pct = match (baseline.throughput, policy.throughput) {
        (0, 0) => 0.0,
        (0, _) => return Err(EvalError::UndefinedBenefit("baseline throughput is zero".into())),
        (b, p) => 100.0 * (p as f64 - b as f64) / b as f64,
    };
    Ok(Benefit {
        raw_emission_benefit_pct: pct_change(base_g, policy_g),
        per_step_emission_benefit_pct: per_step,
        throughput_change_pct,
        throughput_loss: policy.throughput < baseline.throughput,
    })
}

/// One approach's benefit with both zeroing attributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitRecord {
    pub context: String,
    pub approach: usize,
    /// Raw benefit, set to 0 when the intersection lost throughput.
    pub emission_benefit_pct: f64,
    pub throughput_change_pct: f64,
    /// Intersection-level throughput loss.
    pub zeroed: bool,
    /// Raw benefit, set to 0 when this approach lost throughput.
    pub approach_emission_benefit_pct: f64,
    pub approach_zeroed: bool,
    pub raw_emission_benefit_pct: f64,
    pub per_step_emission_benefit_pct: f64,
    pub seeds: Vec<u64>,
}

/// Intersection-level benefit plus one record per approach. Approaches
/// whose benefit is undefined come back as errors in the second list.
pub fn benefits(
    context: &str,
    policy: &EpisodeMetrics,
    baseline: &EpisodeMetrics,
    seeds: &[u64],
) -> Result<(IntersectionRecord, Vec<Result<BenefitRecord, (usize, EvalError)>>), EvalError> {
    if policy.approaches.len() != baseline.approaches.len() {
        return Err(EvalError::InvalidCampaign("policy and baseline differ in approach count".into()));
    }
    let whole = benefit(&policy.intersection(), &baseline.intersection())?;
    let zeroed = whole.throughput_loss;
    let intersection = IntersectionRecord {
        context: context.to_string(),
        emission_benefit_pct: if zeroed { 0.0 } else { whole.raw_emission_benefit_pct },
        raw_emission_benefit_pct: whole.raw_emission_benefit_pct,
        per_step_emission_benefit_pct: whole.per_step_emission_benefit_pct,
        throughput_change_pct: whole.throughput_change_pct,
        zeroed,
        seeds: seeds.to_vec(),
    };
    let records = policy
        .approaches
        .iter()
        .zip(&baseline.approaches)
        .enumerate()
        .map(|(i, (p, b))| {
            let x = benefit(p, b).map_err(|e| (i, e))?;
            Ok(BenefitRecord {
                context: context.to_string(),
                approach: i,
                emission_benefit_pct: if zeroed { 0.0 } else { x.raw_emission_benefit_pct },
                throughput_change_pct: x.throughput_change_pct,
                zeroed,
                approach_emission_benefit_pct: if x.throughput_loss { 0.0 } else { x.raw_emission_benefit_pct },
                approach_zeroed: x.throughput_loss,
                raw_emission_benefit_pct: x.raw_emission_benefit_pct,
                per_step_emission_benefit_pct: x.per_step_emission_benefit_pct,
                seeds: seeds.to_vec(),
            })
        })
        .collect();
    Ok((intersection, records))
}

/// Run one episode to the horizon. Without a controller every vehicle stays
/// human-driven (the baseline).
pub fn run_episode(
    spec: &EpisodeSpec,
    controller: Option<&mut dyn Controller>,
    coefficients: &EmissionCoefficients,
) -> Result<EpisodeMetrics, EvalError> {
    let (mut env, mut obs) = Env::reset_with_control(spec.clone(), coefficients.clone(), controller.is_some())?;
    let empty = BTreeMap::new();
    match controller {
        Some(c) => {
            while !env.is_done() {
                let actions = c.act(&env, &obs)?;
                obs = env.step(&actions)?.observations;
            }
        }
        None => {
            while !env.is_done() {
                env.step(&empty)?;
            }
        }
    }
    Ok(EpisodeMetrics::from_env(&env))
}
