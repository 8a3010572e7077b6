use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ContextError, ContextVector, FeatureSummary, Weather};
use crate::sim::{Approach, FleetMix, IntersectionTopology, Phase, SignalPlan};

/// Yellow interval used by procedural plans (s).
pub const YELLOW_S: f64 = 3.0;
/// All-red clearance between conflicting phases (s).
pub const CLEARANCE_S: f64 = 2.0;
/// Procedural intersections have four approaches.
pub const APPROACHES: usize = 4;
const MAX_ATTEMPTS: usize = 1000;

/// Closed interval `[lo, hi]`; `lo == hi` pins the feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Range {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn within(&self, outer: &Range) -> bool {
        outer.lo <= self.lo && self.hi <= outer.hi
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }

    fn check(&self, name: &str) -> Result<(), ContextError> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi {
            Ok(())
        } else {
            Err(ContextError::InvalidDistribution(format!(
                "{name}: [{}, {}] is not a finite non-empty range",
                self.lo, self.hi
            )))
        }
    }
}

/// Per-feature sampling ranges for procedural contexts. Optional axes that
/// are absent take reference values and do not constrain region tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDistribution {
    #[serde(default)]
    pub name: String,
    /// Allowed `(lane_count, phase_count)` pairs.
    pub lane_setups: Vec<(usize, usize)>,
    pub inflow_vph: Range,
    pub green_s: Range,
    pub red_s: Range,
    pub lane_length_m: Range,
    pub speed_limit_mps: Range,
    pub offset_s: Range,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_c: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub humidity_rh: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adoption_level: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ev_share: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truck_bus_share: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub road_grade_pct: Option<Range>,
}

impl FeatureDistribution {
    pub fn from_toml_str(text: &str) -> Result<Self, ContextError> {
        let d: Self = toml::from_str(text)?;
        d.validate()?;
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self, ContextError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    fn ranges(&self) -> [(&'static str, Range); 6] {
        [
            ("inflow_vph", self.inflow_vph),
            ("green_s", self.green_s),
            ("red_s", self.red_s),
            ("lane_length_m", self.lane_length_m),
            ("speed_limit_mps", self.speed_limit_mps),
            ("offset_s", self.offset_s),
        ]
    }

    fn optional(&self) -> [(&'static str, Option<Range>); 6] {
        [
            ("temperature_c", self.temperature_c),
            ("humidity_rh", self.humidity_rh),
            ("adoption_level", self.adoption_level),
            ("ev_share", self.ev_share),
            ("truck_bus_share", self.truck_bus_share),
            ("road_grade_pct", self.road_grade_pct),
        ]
    }

    pub fn validate(&self) -> Result<(), ContextError> {
        if self.lane_setups.is_empty() {
            return Err(ContextError::InvalidDistribution("lane_setups is empty".into()));
        }
        if let Some((l, p)) = self.lane_setups.iter().find(|(l, p)| *l == 0 || *p == 0) {
            return Err(ContextError::InvalidDistribution(format!(
                "lane_setups: ({l}, {p}) needs lane_count >= 1 and phase_count >= 1"
            )));
        }
        for (name, r) in self.ranges() {
            r.check(name)?;
        }
        for (name, r) in self.optional() {
            if let Some(r) = r {
                r.check(name)?;
            }
        }
        let positive = [
            ("inflow_vph", self.inflow_vph.lo >= 0.0),
            ("green_s", self.green_s.lo > YELLOW_S),
            ("red_s", self.red_s.lo > 0.0),
            ("lane_length_m", self.lane_length_m.lo > 0.0),
            ("speed_limit_mps", self.speed_limit_mps.lo > 0.0),
            ("offset_s", self.offset_s.lo >= 0.0),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, ok)| !ok) {
            return Err(ContextError::InvalidDistribution(format!("{name}: lower bound out of domain")));
        }
        for (name, r, lo, hi) in [
            ("humidity_rh", self.humidity_rh, 0.0, 100.0),
            ("adoption_level", self.adoption_level, 0.0, 1.0),
            ("ev_share", self.ev_share, 0.0, 1.0),
            ("truck_bus_share", self.truck_bus_share, 0.0, 1.0),
        ] {
            if let Some(r) = r {
                if !r.within(&Range::new(lo, hi)) {
                    return Err(ContextError::InvalidDistribution(format!("{name}: must lie in [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    /// Whether a context lies in the joint region spanned by this
    /// distribution: every declared feature within its range and the lane
    /// setup in the set.
    pub fn contains(&self, ctx: &ContextVector) -> bool {
        let f = ctx.summary();
        let a = &ctx.topology.approaches[0];
        self.lane_setups.contains(&(f.lane_count, f.phase_count))
            && self.inflow_vph.contains(f.inflow)
            && self.green_s.contains(f.green)
            && self.red_s.contains(f.red)
            && self.lane_length_m.contains(f.lane_length)
            && self.speed_limit_mps.contains(f.speed_limit)
            && self.offset_s.contains(f.offset)
            && self.temperature_c.is_none_or(|r| r.contains(ctx.weather.temperature))
            && self.humidity_rh.is_none_or(|r| r.contains(ctx.weather.humidity))
            && self.adoption_level.is_none_or(|r| r.contains(ctx.adoption_level))
            && self.ev_share.is_none_or(|r| r.contains(ctx.fleet.ev_share))
            && self.truck_bus_share.is_none_or(|r| r.contains(ctx.fleet.truck_bus_share))
            && self.road_grade_pct.is_none_or(|r| r.contains(a.road_grade))
    }

    /// Whether every point of `self` also lies in `outer`.
    pub fn within(&self, outer: &FeatureDistribution) -> Result<(), String> {
        if let Some(s) = self.lane_setups.iter().find(|s| !outer.lane_setups.contains(s)) {
            return Err(format!("lane setup {s:?}"));
        }
        for ((name, inner), (_, o)) in self.ranges().into_iter().zip(outer.ranges()) {
            if !inner.within(&o) {
                return Err(name.to_string());
            }
        }
        for ((name, inner), (_, o)) in self.optional().into_iter().zip(outer.optional()) {
            match (inner, o) {
                (Some(i), Some(o)) if !i.within(&o) => return Err(name.to_string()),
                (None, Some(_)) => return Err(name.to_string()),
                _ => {}
            }
        }
        Ok(())
    }
}

/// Four identical approaches with default turn-lane maps, joined to the
/// phases of [`procedural_plan`].
pub fn procedural_topology(
    lane_count: usize,
    phase_count: usize,
    lane_length: f64,
    speed_limit: f64,
    grade: f64,
) -> Result<IntersectionTopology, ContextError> {
    let membership: Vec<Vec<usize>> = match phase_count {
        1 => vec![vec![0]; APPROACHES],
        2 => vec![vec![0], vec![1], vec![0], vec![1]],
        3 => vec![vec![0], vec![1], vec![0], vec![2]],
        4 => (0..APPROACHES).map(|a| vec![a]).collect(),
        k => {
            return Err(ContextError::InvalidDistribution(format!(
                "phase_count {k} exceeds the {APPROACHES} approaches"
            )))
        }
    };
    let approaches = membership
        .into_iter()
        .map(|phases| {
            let mut a = Approach::new(lane_count, lane_length, speed_limit, phases);
            a.road_grade = grade;
            a
        })
        .collect();
    Ok(IntersectionTopology::new(approaches))
}

/// Fixed-time plan in which approach 0 sees `green` seconds of green plus
/// yellow followed by `red` seconds of red; the remaining phases share the
/// red time equally.
pub fn procedural_plan(phase_count: usize, green: f64, red: f64, offset: f64) -> Result<SignalPlan, ContextError> {
    let (y, c) = (YELLOW_S, CLEARANCE_S);
    let first_green = green - y;
    if first_green <= 0.0 {
        return Err(ContextError::InvalidDistribution(format!("green {green} s leaves no green after yellow")));
    }
    let phases = match phase_count {
        1 => vec![Phase {
            green_s: first_green,
            yellow_s: y,
            red_clearance_s: red,
            served_approaches: (0..APPROACHES).collect(),
        }],
        k @ 2..=4 => {
            let served: Vec<Vec<usize>> = match k {
                2 => vec![vec![0, 2], vec![1, 3]],
                3 => vec![vec![0, 2], vec![1], vec![3]],
                _ => (0..APPROACHES).map(|a| vec![a]).collect(),
            };
            let others = (k - 1) as f64;
            let other_green = (red - c - others * (y + c)) / others;
            if other_green <= 0.0 {
                return Err(ContextError::InvalidDistribution(format!(
                    "red {red} s too short for {k} phases"
                )));
            }
            served
                .into_iter()
                .enumerate()
                .map(|(i, s)| Phase {
                    green_s: if i == 0 { first_green } else { other_green },
                    yellow_s: y,
                    red_clearance_s: c,
                    served_approaches: s,
                })
                .collect()
        }
        k => {
            return Err(ContextError::InvalidDistribution(format!(
                "phase_count {k} exceeds the {APPROACHES} approaches"
            )))
        }
    };
    Ok(SignalPlan { phases, offset_s: offset })
}

/// Draw one context: each feature independently and uniformly, the lane
/// setup uniformly from its set. Infeasible draws are redrawn.
pub fn sample_context<R: Rng + ?Sized>(dist: &FeatureDistribution, rng: &mut R) -> Result<ContextVector, ContextError> {
    dist.validate()?;
    let mut last_reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let (lane_count, phase_count) = dist.lane_setups[rng.random_range(0..dist.lane_setups.len())];
        let inflow = dist.inflow_vph.sample(rng);
        let green = dist.green_s.sample(rng);
        let red = dist.red_s.sample(rng);
        let lane_length = dist.lane_length_m.sample(rng);
        let speed_limit = dist.speed_limit_mps.sample(rng);
        let offset = dist.offset_s.sample(rng);
        let weather = Weather {
            temperature: dist.temperature_c.map_or(20.0, |r| r.sample(rng)),
            humidity: dist.humidity_rh.map_or(50.0, |r| r.sample(rng)),
        };
        let adoption_level = dist.adoption_level.map_or(0.0, |r| r.sample(rng));
        let defaults = FleetMix::default();
        let fleet = FleetMix {
            ev_share: dist.ev_share.map_or(defaults.ev_share, |r| r.sample(rng)),
            truck_bus_share: dist.truck_bus_share.map_or(defaults.truck_bus_share, |r| r.sample(rng)),
            ..defaults
        };
        let grade = dist.road_grade_pct.map_or(0.0, |r| r.sample(rng));
        let seed: u64 = rng.random();

        let built = procedural_topology(lane_count, phase_count, lane_length, speed_limit, grade)
            .and_then(|t| Ok((t, procedural_plan(phase_count, green, red, offset)?)));
        let (topology, plan) = match built {
            Ok(x) => x,
            Err(e) => {
                last_reason = e.to_string();
                continue;
            }
        };
        let ctx = ContextVector {
            id: format!("ctx-{seed:016x}"),
            seed,
            topology,
            plan,
            inflows: vec![inflow; APPROACHES],
            weather,
            fleet,
            adoption_level,
            features: Some(FeatureSummary {
                lane_count,
                phase_count,
                inflow,
                green,
                red,
                lane_length,
                speed_limit,
                offset,
            }),
        };
        match ctx.validate() {
            Ok(()) => return Ok(ctx),
            Err(e) => last_reason = e.to_string(),
        }
    }
    Err(ContextError::Infeasible {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::rng::{stream, StreamId};
    use crate::sim::SignalState;

    fn table4() -> FeatureDistribution {
        FeatureDistribution::from_toml_str(include_str!("../../../../data/distributions/table4.toml")).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = table4();
        let a = sample_context(&d, &mut stream(11, StreamId::Other(0))).unwrap();
        let b = sample_context(&d, &mut stream(11, StreamId::Other(0))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn procedural_plan_matches_requested_green_and_red() {
        for k in 1..=4 {
            let plan = procedural_plan(k, 26.0, 29.0, 2.0).unwrap();
            let topo = procedural_topology(2, k, 300.0, 17.0, 0.0).unwrap();
            plan.validate(&topo).unwrap();
            let t = plan.timeline(0);
            assert!((t.green_time() - 26.0).abs() < 1e-9, "k={k}");
            assert!((t.cycle() - t.green_time() - 29.0).abs() < 1e-9, "k={k}");
            assert_eq!(t.light(2.0).state, SignalState::Green);
        }
        assert!(procedural_plan(5, 26.0, 29.0, 0.0).is_err());
    }

    #[test]
    fn degenerate_distribution_pins_the_context() {
        let mut d = table4();
        d.lane_setups = vec![(2, 2)];
        for r in [&mut d.inflow_vph, &mut d.green_s, &mut d.red_s, &mut d.lane_length_m, &mut d.speed_limit_mps, &mut d.offset_s] {
            *r = Range::point(r.lo);
        }
        let ctx = sample_context(&d, &mut stream(1, StreamId::Other(0))).unwrap();
        let f = ctx.features.unwrap();
        assert_eq!((f.lane_count, f.phase_count, f.inflow, f.green, f.red), (2, 2, 100.0, 20.0, 20.0));
        assert_eq!((f.lane_length, f.speed_limit, f.offset), (100.0, 16.0, 1.0));
        assert_eq!(ctx.summary(), FeatureSummary { ..f });
    }

    #[test]
    fn infeasible_phase_count_errors_after_resampling() {
        let mut d = table4();
        d.lane_setups = vec![(1, 5)];
        assert!(matches!(
            sample_context(&d, &mut stream(1, StreamId::Other(0))),
            Err(ContextError::Infeasible { .. })
        ));
    }

    #[test]
    fn derived_summary_matches_stored_summary() {
        let ctx = sample_context(&table4(), &mut stream(5, StreamId::Other(0))).unwrap();
        let stored = ctx.features.unwrap();
        let derived = ContextVector { features: None, ..ctx }.summary();
        assert_eq!(stored.lane_count, derived.lane_count);
        assert!((stored.green - derived.green).abs() < 1e-9);
        assert!((stored.red - derived.red).abs() < 1e-9);
    }
}
