//! Context-MDP construction: context vectors, procedural sampling,
//! systematicity splits, datasets and signal-plan search.
//!
//! A [`ContextVector`] fully determines one context-MDP. Its observed block
//! (visible to controllers) holds the approach geometry, signal timing,
//! weather, fuel mix and adoption level. The unobserved block is the seed
//! from which driver parameters, arrivals, vehicle attributes and
//! adoption draws derive.

mod dataset;
mod distribution;
mod signal_opt;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{FleetMix, IntersectionTopology, Scenario, SignalPlan, SimError};

pub use dataset::{load_dataset, parse_dataset, save_dataset, write_dataset, DATASET_FORMAT, DATASET_VERSION};
pub use distribution::{procedural_plan, procedural_topology, sample_context, FeatureDistribution, Range};
pub use signal_opt::{optimize_signal_plan, CandidateAudit, PlanSearch, SearchGrid};
pub use split::{split_systematicity, TestSampler, TrainSampler};

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("invalid feature distribution: {0}")]
    InvalidDistribution(String),
    #[error("no feasible context after {attempts} attempts: {reason}")]
    Infeasible { attempts: usize, reason: String },
    #[error("training support minus the holdout region is empty")]
    EmptyComplement,
    #[error("holdout region is not inside the training support: {0}")]
    HoldoutOutsideSupport(String),
    #[error("signal search grid has no feasible candidate")]
    EmptyGrid,
    #[error("dataset line {line}: {field}: {message}")]
    Dataset { line: usize, field: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot parse distribution: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weather {
    /// °C
    pub temperature: f64,
    /// %RH
    pub humidity: f64,
}

impl Default for Weather {
    fn default() -> Self {
        Self {
            temperature: 20.0,
            humidity: 50.0,
        }
    }
}

/// Scalar features a procedural context was drawn from. Region predicates
/// for train/holdout splits test these values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSummary {
    pub lane_count: usize,
    /// Total number of signal phases.
    pub phase_count: usize,
    /// Per-approach inflow (veh/h).
    pub inflow: f64,
    /// Green plus yellow time of the first approach (s).
    pub green: f64,
    /// Red time of the first approach (s).
    pub red: f64,
    pub lane_length: f64,
    pub speed_limit: f64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextVector {
    pub id: String,
    /// Root of every random stream in episodes built from this context.
    pub seed: u64,
    pub topology: IntersectionTopology,
    pub plan: SignalPlan,
    pub inflows: Vec<f64>,
    #[serde(default)]
    pub weather: Weather,
    #[serde(default)]
    pub fleet: FleetMix,
    pub adoption_level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureSummary>,
}

impl ContextVector {
    pub fn validate(&self) -> Result<(), ContextError> {
        self.scenario(self.seed).validate()?;
        if !(0.0..=100.0).contains(&self.weather.humidity) {
            return Err(ContextError::InvalidDistribution(format!(
                "weather.humidity: {} outside [0, 100]",
                self.weather.humidity
            )));
        }
        if !self.weather.temperature.is_finite() {
            return Err(ContextError::InvalidDistribution("weather.temperature must be finite".into()));
        }
        Ok(())
    }

    /// Kernel scenario for one episode seed.
    pub fn scenario(&self, seed: u64) -> Scenario {
        Scenario {
            id: self.id.clone(),
            topology: self.topology.clone(),
            plan: self.plan.clone(),
            inflows: self.inflows.clone(),
            fleet: self.fleet.clone(),
            adoption_level: self.adoption_level,
            seed,
        }
    }

    /// Stored feature summary, or one derived from the first approach.
    pub fn summary(&self) -> FeatureSummary {
        if let Some(f) = self.features {
            return f;
        }
        let a = &self.topology.approaches[0];
        let timeline = self.plan.timeline(0);
        let green = timeline.green_time();
        FeatureSummary {
            lane_count: a.lane_count,
            phase_count: self.plan.phases.len(),
            inflow: self.inflows[0],
            green,
            red: timeline.cycle() - green,
            lane_length: a.lane_length,
            speed_limit: a.speed_limit,
            offset: self.plan.offset_s,
        }
    }
}
