//! Exhaustive fixed-time plan search scored by simulated average delay.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ContextError;
use crate::sim::{DriverPopulation, FleetMix, IntersectionTopology, Phase, Scenario, SignalPlan, SimConfig, SimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    /// Candidate cycle lengths (s).
    pub cycles_s: Vec<f64>,
    /// Candidate green shares, one entry per phase, each summing to 1.
    pub splits: Vec<Vec<f64>>,
    #[serde(default = "default_yellow")]
    pub yellow_s: f64,
    #[serde(default = "default_clearance")]
    pub red_clearance_s: f64,
    /// Simulated steps per candidate, warmup included.
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    /// Seed shared by every candidate.
    #[serde(default)]
    pub seed: u64,
}

fn default_yellow() -> f64 {
    3.0
}
fn default_clearance() -> f64 {
    2.0
}
fn default_steps() -> u64 {
    1200
}
fn default_warmup() -> u64 {
    120
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAudit {
    pub index: usize,
    pub cycle_s: f64,
    pub split: Vec<f64>,
    /// Average delay per vehicle (s); absent for infeasible candidates.
    pub delay_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSearch {
    pub best: usize,
    pub plan: SignalPlan,
    pub audit: Vec<CandidateAudit>,
}

impl PlanSearch {
    /// The winner's recorded delay is no worse than any other candidate's.
    pub fn certificate_holds(&self) -> bool {
        let Some(best) = self.audit[self.best].delay_s else {
            return false;
        };
        self.audit.iter().filter_map(|c| c.delay_s).all(|d| best <= d)
    }
}

fn phase_membership(topology: &IntersectionTopology) -> Vec<Vec<usize>> {
    let count = topology
        .approaches
        .iter()
        .flat_map(|a| a.phases.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    (0..count)
        .map(|p| {
            (0..topology.approaches.len())
                .filter(|&a| topology.approaches[a].phases.contains(&p))
                .collect()
        })
        .collect()
}

fn candidate_plan(served: &[Vec<usize>], cycle: f64, split: &[f64], grid: &SearchGrid) -> Result<SignalPlan, String> {
    if split.len() != served.len() {
        return Err(format!("split has {} shares for {} phases", split.len(), served.len()));
    }
    let lost = served.len() as f64 * (grid.yellow_s + grid.red_clearance_s);
    let effective = cycle - lost;
    if effective <= 0.0 {
        return Err(format!("cycle {cycle} s shorter than lost time {lost} s"));
    }
    let total: f64 = split.iter().sum();
    if !(total > 0.0) || split.iter().any(|s| !(*s > 0.0)) {
        return Err("green shares must be positive".into());
    }
    let phases = served
        .iter()
        .zip(split)
        .map(|(s, share)| Phase {
            green_s: effective * share / total,
            yellow_s: grid.yellow_s,
            red_clearance_s: grid.red_clearance_s,
            served_approaches: s.clone(),
        })
        .collect();
    Ok(SignalPlan { phases, offset_s: 0.0 })
}

/// Average delay per vehicle of an all-human rollout: time in the network
/// beyond free-flow travel at the speed limit, plus time spent queued
/// before entry, over vehicles arriving after warmup.
pub fn simulated_delay(
    topology: &IntersectionTopology,
    plan: &SignalPlan,
    inflows: &[f64],
    grid: &SearchGrid,
) -> Result<f64, ContextError> {
    let scenario = Scenario {
        id: "signal-opt".into(),
        topology: topology.clone(),
        plan: plan.clone(),
        inflows: inflows.to_vec(),
        fleet: FleetMix::default(),
        adoption_level: 0.0,
        seed: grid.seed,
    };
    let config = SimConfig {
        horizon: grid.steps,
        warmup: grid.warmup,
        ..SimConfig::default()
    };
    let dt = config.dt;
    let mut state = SimState::new(config, scenario, DriverPopulation::default())?;
    let free_time = |a: usize, dist: f64| dist / topology.approaches[a].speed_limit;
    let none = BTreeMap::new();
    let (mut total, mut counted) = (0.0, 0usize);
    for _ in 0..grid.steps {
        let events = state.advance(&none)?;
        for v in events.exited.iter().filter(|v| v.spawn_step >= grid.warmup) {
            let elapsed = (events.step - v.spawn_step) as f64 * dt;
            total += elapsed - free_time(v.approach, topology.path_length(v.approach));
            counted += 1;
        }
        if events.step > grid.warmup {
            total += state.queued() as f64 * dt;
        }
    }
    for v in state.vehicles().filter(|v| v.spawn_step >= grid.warmup) {
        let elapsed = (state.step_count() - v.spawn_step) as f64 * dt;
        total += (elapsed - free_time(v.approach, v.pos)).max(0.0);
        counted += 1;
    }
    counted += state.queued();
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(a.len().cmp(&b.len()))
}

/// Evaluate every (cycle, split) pair and keep the one with least delay;
/// ties go to the shorter cycle, then the lexicographically smaller split.
pub fn optimize_signal_plan(
    topology: &IntersectionTopology,
    inflows: &[f64],
    grid: &SearchGrid,
) -> Result<PlanSearch, ContextError> {
    topology.validate()?;
    let served = phase_membership(topology);
    let points: Vec<(f64, Vec<f64>)> = grid
        .cycles_s
        .iter()
        .flat_map(|&c| grid.splits.iter().map(move |s| (c, s.clone())))
        .collect();
    if points.is_empty() {
        return Err(ContextError::EmptyGrid);
    }
    let results: Vec<Result<CandidateAudit, ContextError>> = points
        .par_iter()
        .enumerate()
        .map(|(index, (cycle, split))| {
            let audit = |delay_s, note| CandidateAudit {
                index,
                cycle_s: *cycle,
                split: split.clone(),
                delay_s,
                note,
            };
            match candidate_plan(&served, *cycle, split, grid) {
                Ok(plan) => Ok(audit(Some(simulated_delay(topology, &plan, inflows, grid)?), None)),
                Err(reason) => Ok(audit(None, Some(reason))),
            }
        })
        .collect();
    let audit: Vec<CandidateAudit> = results.into_iter().collect::<Result<_, _>>()?;
    let best = audit
        .iter()
        .filter(|c| c.delay_s.is_some())
        .min_by(|a, b| {
            a.delay_s
                .unwrap()
                .total_cmp(&b.delay_s.unwrap())
                .then(a.cycle_s.total_cmp(&b.cycle_s))
                .then(lexicographic(&a.split, &b.split))
        })
        .ok_or(ContextError::EmptyGrid)?
        .index;
    let plan = candidate_plan(&served, audit[best].cycle_s, &audit[best].split, grid).expect("winner is feasible");
    Ok(PlanSearch { best, plan, audit })
}
