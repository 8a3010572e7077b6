//! Bayesian calibration of IDM parameters from car-following transitions.
//!
//! Generative model, per driver class:
//!
//! ```text
//! ln θ ~ N(μ0, Σ0),   θ = [v0, s0, T, α, β]
//! ln σ ~ N(μ_ε, σ1²)
//! v' ~ N(v + a_IDM(s, v, Δv; θ)·Δt, (σ·Δt)²)
//! ```
//!
//! The acceleration exponent δ is held fixed.

mod population;
mod sampler;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::trace::{read_rows, TraceRow};
use crate::sim::{IdmParams, VehicleClass};

pub use population::{fit_population, ks_two_sample, ClassFit, PopulationFit};
pub use sampler::{
    effective_sample_size, sample_posterior, split_rhat, CalibrationPrior, ChainConfig, PosteriorSample,
    PosteriorSummary, Proposal,
};

/// Parameter names in θ order, then the noise scale.
pub const PARAM_NAMES: [&str; 6] = ["v_desired", "gap_min", "headway_time", "accel_max", "decel_comf", "sigma"];

/// Free-road exponent used by the likelihood.
pub const ACCEL_EXP: f64 = 4.0;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid chain configuration: {0}")]
    InvalidChain(String),
    #[error("log posterior is not finite at the initial point; check the prior and data")]
    NonFiniteStart,
    #[error("unknown vehicle class label {0:?}")]
    UnknownClass(String),
    #[error("trace: {0}")]
    Trace(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One observed step of a following vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Bumper-to-bumper gap to the leader (m).
    pub gap: f64,
    pub speed: f64,
    /// Ego speed minus leader speed (m/s).
    pub speed_delta: f64,
    /// Speed one step later.
    pub next_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverTrajectory {
    pub driver: String,
    pub class: VehicleClass,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDataset {
    /// Step length shared by every transition (s).
    pub dt: f64,
    pub drivers: Vec<DriverTrajectory>,
}

impl TrajectoryDataset {
    pub fn empty(dt: f64) -> Self {
        Self { dt, drivers: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.drivers.iter().map(|d| d.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.drivers.iter().flat_map(|d| d.transitions.iter())
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CalibrationError::InvalidData(format!("dt must be positive, got {}", self.dt)));
        }
        for d in &self.drivers {
            for (i, t) in d.transitions.iter().enumerate() {
                let ok = t.gap > 0.0
                    && t.gap.is_finite()
                    && t.speed >= 0.0
                    && t.next_speed >= 0.0
                    && t.speed.is_finite()
                    && t.next_speed.is_finite()
                    && t.speed_delta.is_finite();
                if !ok {
                    return Err(CalibrationError::InvalidData(format!(
                        "driver {} transition {i}: gap must be > 0 and speeds >= 0 and finite",
                        d.driver
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same-class subset.
    pub fn of_class(&self, class: VehicleClass) -> Self {
        Self {
            dt: self.dt,
            drivers: self.drivers.iter().filter(|d| d.class == class).cloned().collect(),
        }
    }

    /// Transitions from a trace export: consecutive steps of one vehicle
    /// where the first has a leader. The step length is read off the time
    /// column.
    pub fn from_trace_rows(rows: &[TraceRow]) -> Result<Self, CalibrationError> {
        let mut by_vehicle: BTreeMap<u64, Vec<&TraceRow>> = BTreeMap::new();
        for r in rows {
            by_vehicle.entry(r.vehicle).or_default().push(r);
        }
        let mut dt: Option<f64> = None;
        let mut drivers = Vec::new();
        for (id, mut list) in by_vehicle {
            list.sort_by_key(|r| r.step);
            let class = parse_class(&list[0].class)?;
            let mut transitions = Vec::new();
            for w in list.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b.step != a.step + 1 {
                    continue;
                }
                let step_dt = b.time - a.time;
                match dt {
                    None => dt = Some(step_dt),
                    Some(d) if (d - step_dt).abs() > 1e-9 => {
                        return Err(CalibrationError::InvalidData(format!(
                            "vehicle {id}: step length {step_dt} differs from {d}"
                        )))
                    }
                    _ => {}
                }
                if let (Some(gap), Some(ls)) = (a.leader_gap, a.leader_speed) {
                    if gap > 0.0 {
                        transitions.push(Transition {
                            gap,
                            speed: a.speed,
                            speed_delta: a.speed - ls,
                            next_speed: b.speed,
                        });
                    }
                }
            }
            if !transitions.is_empty() {
                drivers.push(DriverTrajectory {
                    driver: id.to_string(),
                    class,
                    transitions,
                });
            }
        }
        let data = Self {
            dt: dt.unwrap_or(0.5),
            drivers,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn load_trace(path: &Path) -> Result<Self, CalibrationError> {
        let rows = read_rows(std::fs::File::open(path)?)?;
        Self::from_trace_rows(&rows)
    }
}

pub fn parse_class(label: &str) -> Result<VehicleClass, CalibrationError> {
    match label {
        "car" => Ok(VehicleClass::Car),
        "truck_bus" => Ok(VehicleClass::TruckBus),
        other => Err(CalibrationError::UnknownClass(other.to_string())),
    }
}

pub fn params_from_theta(theta: &[f64; 5]) -> IdmParams {
    IdmParams {
        v_desired: theta[0],
        gap_min: theta[1],
        headway_time: theta[2],
        accel_max: theta[3],
        decel_comf: theta[4],
        accel_exp: ACCEL_EXP,
    }
}

/// IDM acceleration and its gradient with respect to ln θ.
fn accel_and_grad(theta: &[f64; 5], t: &Transition) -> (f64, [f64; 5]) {
    let [v0, s0, tt, al, be] = *theta;
    let (v, s, dv) = (t.speed, t.gap, t.speed_delta);
    let root = (al * be).sqrt();
    let dynamic = v * tt + v * dv / (2.0 * root);
    let active = dynamic > 0.0;
    let s_star = s0 + if active { dynamic } else { 0.0 };
    let free = (v / v0).powf(ACCEL_EXP);
    let inter = (s_star / s).powi(2);
    let a = al * (1.0 - free - inter);
    // d a / d s* = −2α s*/s².
    let da_ds = -2.0 * al * s_star / (s * s);
    let ds_dal = if active { -v * dv / (4.0 * al * root) } else { 0.0 };
    let ds_dbe = if active { -v * dv / (4.0 * be * root) } else { 0.0 };
    let d = [
        al * ACCEL_EXP * free / v0,
        da_ds,
        if active { da_ds * v } else { 0.0 },
        (1.0 - free - inter) + da_ds * ds_dal,
        da_ds * ds_dbe,
    ];
    let mut g = [0.0; 5];
    for k in 0..5 {
        g[k] = theta[k] * d[k];
    }
    (a, g)
}

/// One-step speed prediction `v + a_IDM·Δt`, not clamped at zero.
pub fn predict_next_speed(theta: &[f64; 5], t: &Transition, dt: f64) -> f64 {
    t.speed + accel_and_grad(theta, t).0 * dt
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Gaussian log-likelihood of the observed next speeds.
pub fn log_likelihood(theta: &[f64; 5], sigma: f64, data: &TrajectoryDataset) -> f64 {
    let sd = sigma * data.dt;
    let norm = -(sd.ln() + LN_SQRT_2PI);
    data.transitions()
        .map(|t| {
            let r = (t.next_speed - predict_next_speed(theta, t, data.dt)) / sd;
            norm - 0.5 * r * r
        })
        .sum()
}

/// Log-likelihood and its gradient with respect to `[ln θ, ln σ]`.
pub fn log_likelihood_grad(theta: &[f64; 5], sigma: f64, data: &TrajectoryDataset) -> (f64, [f64; 6]) {
    let dt = data.dt;
    let sd = sigma * dt;
    let norm = -(sd.ln() + LN_SQRT_2PI);
    let mut ll = 0.0;
    let mut g = [0.0; 6];
    for t in data.transitions() {
        let (a, da) = accel_and_grad(theta, t);
        let r = (t.next_speed - t.speed - a * dt) / sd;
        ll += norm - 0.5 * r * r;
        // d ll / d a = r/sd · dt.
        let w = r / sd * dt;
        for k in 0..5 {
            g[k] += w * da[k];
        }
        g[5] += r * r - 1.0;
    }
    (ll, g)
}

/// Synthetic transitions drawn from the generative model: states uniform
/// over typical car-following ranges, next speeds from θ with noise σ.
/// States that would brake to a standstill within the step are redrawn.
pub fn synthetic_dataset<R: Rng + ?Sized>(
    theta: &[f64; 5],
    sigma: f64,
    transitions: usize,
    dt: f64,
    class: VehicleClass,
    rng: &mut R,
) -> TrajectoryDataset {
    let per_driver = 100;
    let mut drivers = Vec::new();
    let mut left = transitions;
    while left > 0 {
        let n = left.min(per_driver);
        let list = (0..n)
            .map(|_| loop {
                let t = Transition {
                    gap: rng.random_range(2.0..80.0),
                    speed: rng.random_range(0.0..20.0),
                    speed_delta: rng.random_range(-5.0..5.0),
                    next_speed: 0.0,
                };
                // Keep states whose next speed stays well clear of zero so
                // the Gaussian noise is never truncated.
                let mean = predict_next_speed(theta, &t, dt);
                let noise: f64 = rng.sample(StandardNormal);
                let next = mean + sigma * dt * noise;
                if mean - 6.0 * sigma * dt > 0.0 && next >= 0.0 {
                    break Transition { next_speed: next, ..t };
                }
            })
            .collect();
        drivers.push(DriverTrajectory {
            driver: format!("synthetic-{}", drivers.len()),
            class,
            transitions: list,
        });
        left -= n;
    }
    TrajectoryDataset { dt, drivers }
}
