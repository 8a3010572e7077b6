//! Per-vehicle, per-step CSV trace.
//!
//! Column order: `scenario, step, time, vehicle, class, approach, lane, pos,
//! speed, accel, phase, signal, leader, leader_gap, leader_speed`. Leader
//! columns are empty when the vehicle has no leader in its lane.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::SimState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub scenario: String,
    pub step: u64,
    pub time: f64,
    pub vehicle: u64,
    pub class: String,
    pub approach: usize,
    pub lane: usize,
    pub pos: f64,
    pub speed: f64,
    pub accel: f64,
    pub phase: usize,
    pub signal: String,
    pub leader: Option<u64>,
    pub leader_gap: Option<f64>,
    pub leader_speed: Option<f64>,
}

/// Snapshot rows for every vehicle currently in the network, in id order.
pub fn rows(state: &SimState) -> Vec<TraceRow> {
    let (phase, _) = state.scenario().plan.phase_at(state.clock());
    state
        .vehicles()
        .map(|v| {
            let leader = state.leader(v.id);
            TraceRow {
                scenario: state.scenario().id.clone(),
                step: state.step_count(),
                time: state.clock(),
                vehicle: v.id.0,
                class: v.class.as_str().to_string(),
                approach: v.approach,
                lane: v.lane,
                pos: v.pos,
                speed: v.speed,
                accel: v.accel,
                phase,
                signal: state.light(v.approach).state.as_str().to_string(),
                leader: leader.map(|l| l.id.0),
                leader_gap: leader.map(|l| l.gap),
                leader_speed: leader.map(|l| l.speed),
            }
        })
        .collect()
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(out),
        }
    }

    pub fn record(&mut self, state: &SimState) -> Result<(), csv::Error> {
        for row in rows(state) {
            self.inner.serialize(row)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, csv::Error> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| e.into_error().into())
    }
}

pub fn read_rows<R: std::io::Read>(input: R) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
