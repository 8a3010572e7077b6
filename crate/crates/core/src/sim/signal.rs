//! Fixed-time signal plans and per-approach signal timelines.

use serde::{Deserialize, Serialize};

use super::{IntersectionTopology, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalState {
    Red,
    Yellow,
    Green,
}

impl SignalState {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalState::Red => "red",
            SignalState::Yellow => "yellow",
            SignalState::Green => "green",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub green_s: f64,
    pub yellow_s: f64,
    /// All-red interval closing the phase.
    pub red_clearance_s: f64,
    pub served_approaches: Vec<usize>,
}

impl Phase {
    pub fn duration(&self) -> f64 {
        self.green_s + self.yellow_s + self.red_clearance_s
    }
}

/// Ordered fixed-time phases. The plan starts its first phase when
/// `clock - offset_s` is a multiple of the cycle length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalPlan {
    pub phases: Vec<Phase>,
    pub offset_s: f64,
}

impl SignalPlan {
    pub fn cycle_s(&self) -> f64 {
        self.phases.iter().fold(0.0, |acc, p| acc + p.duration())
    }

    pub fn validate(&self, topology: &IntersectionTopology) -> Result<(), SimError> {
        if self.phases.is_empty() {
            return Err(SimError::InvalidConfig("signal plan has no phases".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            let parts = [p.green_s, p.yellow_s, p.red_clearance_s];
            if parts.iter().any(|d| !(d.is_finite() && *d >= 0.0)) || p.green_s <= 0.0 {
                return Err(SimError::InvalidConfig(format!(
                    "phase {i}: durations must be finite, non-negative, with green_s > 0"
                )));
            }
            if let Some(&a) = p.served_approaches.iter().find(|&&a| a >= topology.approaches.len()) {
                return Err(SimError::InvalidConfig(format!(
                    "phase {i}: serves unknown approach {a}"
                )));
            }
        }
        let cycle = self.cycle_s();
        if !(self.offset_s >= 0.0 && self.offset_s < cycle) {
            return Err(SimError::InvalidConfig(format!(
                "offset_s {} outside [0, {cycle})",
                self.offset_s
            )));
        }
        for (a, approach) in topology.approaches.iter().enumerate() {
            let mut serving: Vec<usize> = self
                .phases
                .iter()
                .enumerate()
                .filter(|(_, p)| p.served_approaches.contains(&a))
                .map(|(i, _)| i)
                .collect();
            let mut listed = approach.phases.clone();
            serving.sort_unstable();
            listed.sort_unstable();
            listed.dedup();
            if serving != listed {
                return Err(SimError::InvalidConfig(format!(
                    "approach {a}: topology lists phases {listed:?} but plan serves it in {serving:?}"
                )));
            }
        }
        Ok(())
    }

    /// Position within the cycle, in [0, cycle).
    pub fn in_cycle(&self, clock: f64) -> f64 {
        wrap(clock - self.offset_s, self.cycle_s())
    }

    /// Active phase index and time elapsed within it.
    pub fn phase_at(&self, clock: f64) -> (usize, f64) {
        let tau = self.in_cycle(clock);
        let mut start = 0.0;
        for (i, p) in self.phases.iter().enumerate() {
            let end = start + p.duration();
            if tau < end {
                return (i, tau - start);
            }
            start = end;
        }
        let last = self.phases.len() - 1;
        (last, tau - (start - self.phases[last].duration()))
    }

    pub fn timeline(&self, approach: usize) -> ApproachTimeline {
        let mut segments: Vec<Segment> = Vec::new();
        let mut start = 0.0;
        for p in &self.phases {
            let served = p.served_approaches.contains(&approach);
            let parts = [
                (p.green_s, if served { SignalState::Green } else { SignalState::Red }),
                (p.yellow_s, if served { SignalState::Yellow } else { SignalState::Red }),
                (p.red_clearance_s, SignalState::Red),
            ];
            for (len, state) in parts {
                if len <= 0.0 {
                    continue;
                }
                let end = start + len;
                match segments.last_mut() {
                    Some(last) if last.state == state => last.end = end,
                    _ => segments.push(Segment { start, end, state }),
                }
                start = end;
            }
        }
        ApproachTimeline {
            cycle: start,
            offset: self.offset_s,
            segments,
        }
    }

    pub fn timelines(&self, approach_count: usize) -> Vec<ApproachTimeline> {
        (0..approach_count).map(|a| self.timeline(a)).collect()
    }
}

fn wrap(t: f64, cycle: f64) -> f64 {
    let tau = t.rem_euclid(cycle);
    if tau >= cycle {
        0.0
    } else {
        tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    start: f64,
    end: f64,
    state: SignalState,
}

/// What one approach sees over a cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproachTimeline {
    cycle: f64,
    offset: f64,
    segments: Vec<Segment>,
}

/// Light shown to an approach and the time until it changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Light {
    pub state: SignalState,
    /// Seconds until the state changes; infinite for a constant signal.
    pub remaining: f64,
}

impl ApproachTimeline {
    pub fn cycle(&self) -> f64 {
        self.cycle
    }

    fn locate(&self, clock: f64) -> (usize, f64) {
        let tau = wrap(clock - self.offset, self.cycle);
        let idx = self
            .segments
            .iter()
            .position(|s| tau < s.end)
            .unwrap_or(self.segments.len() - 1);
        (idx, tau)
    }

    pub fn light(&self, clock: f64) -> Light {
        let (idx, tau) = self.locate(clock);
        let state = self.segments[idx].state;
        let n = self.segments.len();
        let mut remaining = self.segments[idx].end - tau;
        let mut k = 1;
        while k < n {
            let seg = &self.segments[(idx + k) % n];
            if seg.state != state {
                return Light { state, remaining };
            }
            remaining += seg.end - seg.start;
            k += 1;
        }
        // The first segment may continue the last one across the cycle wrap.
        if n == 1 {
            remaining = f64::INFINITY;
        }
        Light { state, remaining }
    }

    /// Green and yellow time per cycle.
    pub fn green_time(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.state != SignalState::Red)
            .map(|s| s.end - s.start)
            .sum()
    }

    /// Times (relative to `clock`) of the next `n` green onsets strictly in
    /// the future.
    pub fn green_onsets(&self, clock: f64, n: usize) -> Vec<f64> {
        let count = self.segments.len();
        let onsets: Vec<f64> = (0..count)
            .filter(|&i| {
                let prev = self.segments[(i + count - 1) % count].state;
                self.segments[i].state == SignalState::Green && prev != SignalState::Green
            })
            .map(|i| self.segments[i].start)
            .collect();
        if onsets.is_empty() {
            return vec![f64::INFINITY; n];
        }
        let (_, tau) = self.locate(clock);
        let mut out = Vec::with_capacity(n);
        let mut cycle_base = 0.0;
        while out.len() < n {
            for &o in &onsets {
                let rel = cycle_base + o - tau;
                if rel > 0.0 && out.len() < n {
                    out.push(rel);
                }
            }
            cycle_base += self.cycle;
        }
        out
    }
}

/// Virtual upstream signal that meters arrivals onto an approach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnGate {
    pub cycle_s: f64,
    pub green_s: f64,
    pub offset_s: f64,
}

impl SpawnGate {
    pub fn is_open(&self, clock: f64) -> bool {
        wrap(clock - self.offset_s, self.cycle_s) < self.green_s
    }
}
