//! Braking-distance safety bound shared by the kernel and the env clamp.
//!
//! The bound keeps, for every follower/leader pair, the invariant
//!
//! ```text
//! gap >= gap_min  and  gap - gap_min >= d_stop(v_ego) - d_stop(v_leader)
//! ```
//!
//! where `d_stop` is the distance covered when braking at the maximum
//! deceleration under the kernel's own discrete update. Because every
//! vehicle's acceleration is bounded below by that deceleration, a follower
//! can always restore the invariant on the next step, so gaps never go
//! negative.

use super::SignalState;

/// Distance covered from `speed` to standstill braking at `decel` under
/// the clamped speed update with trapezoidal displacement.
pub fn stopping_distance(speed: f64, decel: f64, dt: f64) -> f64 {
    if speed <= 0.0 {
        return 0.0;
    }
    let per_step = decel * dt;
    let n = (speed / per_step).floor();
    let rest = speed - n * per_step;
    dt * (n * speed - 0.5 * per_step * n * n) + 0.5 * rest * dt
}

/// What the ego vehicle must not run into: a vehicle rear or a stop line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    /// Bumper-to-bumper (or bumper-to-line) distance (m).
    pub gap: f64,
    /// Obstacle speed; 0 for a stop line.
    pub speed: f64,
}

/// Safety margins for one ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyBound {
    pub gap_min: f64,
    /// Maximum deceleration any vehicle can apply, positive (m/s²).
    pub max_brake: f64,
    pub dt: f64,
}

impl SafetyBound {
    fn holds(&self, ego_speed: f64, next_speed: f64, obstacle: Obstacle) -> bool {
        let leader_next = (obstacle.speed - self.max_brake * self.dt).max(0.0);
        let leader_disp = 0.5 * (obstacle.speed + leader_next) * self.dt;
        let ego_disp = 0.5 * (ego_speed + next_speed) * self.dt;
        let next_gap = obstacle.gap + leader_disp - ego_disp;
        let margin = (stopping_distance(next_speed, self.max_brake, self.dt)
            - stopping_distance(leader_next, self.max_brake, self.dt))
        .max(0.0);
        next_gap - self.gap_min >= margin
    }

    /// Largest acceleration keeping the invariant after one step even if
    /// the obstacle brakes at `max_brake`. Returns `+inf` when the bound
    /// does not bind below `accel_max`, `-inf` when no acceleration can
    /// satisfy it.
    pub fn max_accel(&self, ego_speed: f64, obstacle: Obstacle, accel_max: f64) -> f64 {
        let top = (ego_speed + accel_max * self.dt).max(0.0);
        if self.holds(ego_speed, top, obstacle) {
            return f64::INFINITY;
        }
        if !self.holds(ego_speed, 0.0, obstacle) {
            return f64::NEG_INFINITY;
        }
        let (mut lo, mut hi) = (0.0, top);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.holds(ego_speed, mid, obstacle) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo - ego_speed) / self.dt
    }

    /// Largest speed at which a vehicle placed `obstacle.gap` behind the
    /// obstacle satisfies the invariant right away.
    pub fn max_speed(&self, obstacle: Obstacle, speed_cap: f64) -> f64 {
        let budget = obstacle.gap - self.gap_min;
        if budget < 0.0 {
            return 0.0;
        }
        let allowed = budget + stopping_distance(obstacle.speed, self.max_brake, self.dt);
        if stopping_distance(speed_cap, self.max_brake, self.dt) <= allowed {
            return speed_cap;
        }
        let (mut lo, mut hi) = (0.0, speed_cap);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if stopping_distance(mid, self.max_brake, self.dt) <= allowed {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Apply the upper limits and then the lower bound: `max(min(a, max, safe), min)`.
pub fn clamp_accel(proposed: f64, safe: f64, bounds: [f64; 2]) -> f64 {
    proposed.min(bounds[1]).min(safe).max(bounds[0])
}

/// Whether the stop line acts as a stationary leader.
///
/// Red engages whenever the vehicle can still stop before the line at
/// maximum braking. Yellow engages only outside the comfortable stopping
/// distance `v²/(2·decel_comf)`.
pub fn stop_line_engaged(
    light: SignalState,
    dist_to_line: f64,
    speed: f64,
    decel_comf: f64,
    max_brake: f64,
    dt: f64,
) -> bool {
    if dist_to_line <= 0.0 {
        return false;
    }
    match light {
        SignalState::Green => false,
        SignalState::Yellow => dist_to_line > speed * speed / (2.0 * decel_comf),
        SignalState::Red => stopping_distance(speed, max_brake, dt) <= dist_to_line,
    }
}

/// Time to collision `gap / closing`, infinite for a non-closing pair.
pub fn ttc(gap: f64, closing_speed: f64) -> f64 {
    if closing_speed > 0.0 {
        gap / closing_speed
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::idm::{displacement, speed_update};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn simulate_braking(mut v: f64, decel: f64, dt: f64) -> f64 {
        let mut d = 0.0;
        while v > 0.0 {
            let next = speed_update(v, -decel, dt);
            d += displacement(v, next, dt);
            v = next;
        }
        d
    }

    #[test]
    fn ttc_cases() {
        assert_eq!(ttc(20.0, 5.0), 4.0);
        assert_eq!(ttc(20.0, 0.0), f64::INFINITY);
        assert_eq!(ttc(20.0, -3.0), f64::INFINITY);
        assert_eq!(ttc(0.0, 1.0), 0.0);
    }

    #[test]
    fn stopping_distance_matches_stepwise_braking() {
        for &(v, b) in &[(15.0, 7.5), (10.0, 2.0), (0.3, 7.5), (13.37, 4.2), (0.0, 3.0)] {
            assert_abs_diff_eq!(stopping_distance(v, b, 0.5), simulate_braking(v, b, 0.5), epsilon = 1e-9);
        }
    }

    #[test]
    fn bound_brakes_toward_a_close_stationary_leader() {
        let bound = SafetyBound { gap_min: 2.0, max_brake: 7.5, dt: 0.5 };
        let obstacle = Obstacle { gap: 10.0, speed: 0.0 };
        let safe = bound.max_accel(15.0, obstacle, 3.0);
        let a = clamp_accel(0.0, safe, [-7.5, 3.0]);
        assert!(a < 0.0);
        // Closed-form check of the one-step gap under the realized action.
        let v1 = speed_update(15.0, a, 0.5);
        let gap1 = 10.0 - displacement(15.0, v1, 0.5);
        assert!(gap1 >= 2.0 - 1e-9, "gap after one step {gap1}");
    }

    #[test]
    fn bound_is_slack_on_an_open_road() {
        let bound = SafetyBound { gap_min: 2.0, max_brake: 7.5, dt: 0.5 };
        let far = Obstacle { gap: 500.0, speed: 10.0 };
        assert_eq!(bound.max_accel(10.0, far, 3.0), f64::INFINITY);
    }

    #[test]
    fn max_speed_respects_invariant() {
        let bound = SafetyBound { gap_min: 2.0, max_brake: 7.5, dt: 0.5 };
        let o = Obstacle { gap: 12.0, speed: 0.0 };
        let v = bound.max_speed(o, 20.0);
        assert!(stopping_distance(v, 7.5, 0.5) <= 10.0 + 1e-9);
        assert!(v > 0.0 && v < 20.0);
        assert_eq!(bound.max_speed(Obstacle { gap: 1.0, speed: 0.0 }, 20.0), 0.0);
    }

    #[test]
    fn yellow_dilemma_rule() {
        // v²/(2·2) = 56.25 m at 15 m/s.
        assert!(stop_line_engaged(SignalState::Yellow, 60.0, 15.0, 2.0, 7.5, 0.5));
        assert!(!stop_line_engaged(SignalState::Yellow, 50.0, 15.0, 2.0, 7.5, 0.5));
        assert!(stop_line_engaged(SignalState::Red, 50.0, 15.0, 2.0, 7.5, 0.5));
        assert!(!stop_line_engaged(SignalState::Red, 5.0, 15.0, 2.0, 7.5, 0.5));
        assert!(!stop_line_engaged(SignalState::Green, 50.0, 15.0, 2.0, 7.5, 0.5));
    }

    proptest! {
        #[test]
        fn invariant_is_recoverable(
            v in 0.0f64..25.0, vl in 0.0f64..25.0, extra in 0.0f64..50.0, al in -7.5f64..3.0,
        ) {
            // Start from a pair satisfying the invariant with leader acting freely.
            let bound = SafetyBound { gap_min: 2.0, max_brake: 7.5, dt: 0.5 };
            let margin = (stopping_distance(v, 7.5, 0.5) - stopping_distance(vl, 7.5, 0.5)).max(0.0);
            let gap = 2.0 + margin + extra;
            let safe = bound.max_accel(v, Obstacle { gap, speed: vl }, 3.0);
            let a = clamp_accel(3.0, safe, [-7.5, 3.0]);
            let v1 = speed_update(v, a, 0.5);
            let vl1 = speed_update(vl, al, 0.5);
            let gap1 = gap + displacement(vl, vl1, 0.5) - displacement(v, v1, 0.5);
            prop_assert!(gap1 >= 2.0 - 1e-6);
            let margin1 = (stopping_distance(v1, 7.5, 0.5) - stopping_distance(vl1, 7.5, 0.5)).max(0.0);
            prop_assert!(gap1 - 2.0 >= margin1 - 1e-6);
        }

        #[test]
        fn clamp_is_idempotent(x in -50.0f64..50.0, safe in prop_oneof![Just(f64::INFINITY), Just(f64::NEG_INFINITY), -20.0f64..20.0]) {
            let b = [-7.5, 3.0];
            let once = clamp_accel(x, safe, b);
            prop_assert_eq!(clamp_accel(once, safe, b), once);
        }
    }
}
