//! Intelligent Driver Model car-following law and the discrete speed update.

use serde::{Deserialize, Serialize};

use super::SimError;

/// IDM behavioural parameters of one driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdmParams {
    /// Desired free-flow speed v0 (m/s).
    pub v_desired: f64,
    /// Minimum standstill gap s0 (m).
    pub gap_min: f64,
    /// Desired time headway T (s).
    pub headway_time: f64,
    /// Maximum acceleration (m/s²).
    pub accel_max: f64,
    /// Comfortable deceleration, positive (m/s²).
    pub decel_comf: f64,
    /// Free-road acceleration exponent.
    pub accel_exp: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v_desired: 15.0,
            gap_min: 2.0,
            headway_time: 1.5,
            accel_max: 1.5,
            decel_comf: 2.0,
            accel_exp: 4.0,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let fields = [
            ("v_desired", self.v_desired),
            ("gap_min", self.gap_min),
            ("headway_time", self.headway_time),
            ("accel_max", self.accel_max),
            ("decel_comf", self.decel_comf),
            ("accel_exp", self.accel_exp),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(SimError::InvalidInput { what: name, value });
            }
        }
        if self.accel_exp < 1.0 {
            return Err(SimError::InvalidInput {
                what: "accel_exp",
                value: self.accel_exp,
            });
        }
        Ok(())
    }

    /// Copy with the desired speed capped at `limit`.
    pub fn capped(&self, limit: f64) -> Self {
        Self {
            v_desired: self.v_desired.min(limit),
            ..*self
        }
    }
}

fn finite(what: &'static str, value: f64) -> Result<f64, SimError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::InvalidInput { what, value })
    }
}

/// Desired dynamic gap s*(v, Δv) = s0 + max(0, vT + vΔv / (2√(αβ))).
///
/// `speed_delta` is the approach rate, ego speed minus leader speed.
pub fn desired_gap(ego_speed: f64, speed_delta: f64, p: &IdmParams) -> Result<f64, SimError> {
    let v = finite("ego_speed", ego_speed)?;
    let dv = finite("speed_delta", speed_delta)?;
    if v < 0.0 {
        return Err(SimError::InvalidInput {
            what: "ego_speed",
            value: v,
        });
    }
    Ok(desired_gap_raw(v, dv, p))
}

#[inline]
pub(crate) fn desired_gap_raw(v: f64, dv: f64, p: &IdmParams) -> f64 {
    let dynamic = v * p.headway_time + v * dv / (2.0 * (p.accel_max * p.decel_comf).sqrt());
    p.gap_min + dynamic.max(0.0)
}

/// IDM acceleration α[1 − (v/v0)^δ − (s*/s)²].
///
/// `gap` may be `f64::INFINITY` for a free road, in which case the
/// interaction term vanishes.
pub fn idm_acceleration(
    ego_speed: f64,
    gap: f64,
    speed_delta: f64,
    p: &IdmParams,
) -> Result<f64, SimError> {
    let v = finite("ego_speed", ego_speed)?;
    let dv = finite("speed_delta", speed_delta)?;
    if v < 0.0 {
        return Err(SimError::InvalidInput {
            what: "ego_speed",
            value: v,
        });
    }
    if gap.is_nan() || gap <= 0.0 || gap == f64::NEG_INFINITY {
        return Err(SimError::InvalidInput { what: "gap", value: gap });
    }
    Ok(idm_raw(v, gap, dv, p))
}

#[inline]
pub(crate) fn idm_raw(v: f64, gap: f64, dv: f64, p: &IdmParams) -> f64 {
    let free = (v / p.v_desired).powf(p.accel_exp);
    let interaction = if gap.is_infinite() {
        0.0
    } else {
        let ratio = desired_gap_raw(v, dv, p) / gap;
        ratio * ratio
    };
    p.accel_max * (1.0 - free - interaction)
}

/// Clamped Euler speed update max(0, v + a·dt).
pub fn speed_update(speed: f64, accel: f64, dt: f64) -> f64 {
    (speed + accel * dt).max(0.0)
}

/// Trapezoidal displacement over one step.
#[inline]
pub fn displacement(old_speed: f64, new_speed: f64, dt: f64) -> f64 {
    0.5 * (old_speed + new_speed) * dt
}

/// Speed at which IDM acceleration is zero behind a leader moving at the
/// same speed `gap` metres ahead.
pub fn equilibrium_speed(gap: f64, p: &IdmParams) -> f64 {
    if gap.is_infinite() {
        return p.v_desired;
    }
    if gap <= p.gap_min {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, p.v_desired);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if idm_raw(mid, gap, 0.0, p) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> IdmParams {
        IdmParams::default()
    }

    #[test]
    fn free_flow_fixed_point_is_zero() {
        let p = params();
        assert_eq!(idm_acceleration(p.v_desired, f64::INFINITY, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn standstill_free_road_gives_accel_max() {
        let p = params();
        assert_eq!(idm_acceleration(0.0, f64::INFINITY, 0.0, &p).unwrap(), p.accel_max);
    }

    #[test]
    fn gap_equal_to_desired_gap_leaves_free_term() {
        // Hand evaluation: the interaction ratio is exactly 1, so
        // a = 1.5 * (1 - (5/15)^4 - 1) = -1.5/81.
        let p = params();
        let s_star = desired_gap(5.0, 0.0, &p).unwrap();
        let a = idm_acceleration(5.0, s_star, 0.0, &p).unwrap();
        assert_abs_diff_eq!(a, -1.5 / 81.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a, -0.01852, epsilon = 1e-5);
    }

    #[test]
    fn desired_gap_cases() {
        let p = params();
        assert_eq!(desired_gap(0.0, 0.0, &p).unwrap(), p.gap_min);
        assert_abs_diff_eq!(desired_gap(10.0, 0.0, &p).unwrap(), 17.0, epsilon = 1e-12);
        // 2*1.5 + 2*(-10)/(2*sqrt(3)) < 0, so the dynamic term clamps to 0.
        assert_eq!(desired_gap(2.0, -10.0, &p).unwrap(), p.gap_min);
    }

    #[test]
    fn speed_update_cases() {
        assert_eq!(speed_update(10.0, 0.0, 0.5), 10.0);
        assert_eq!(speed_update(1.0, -4.0, 0.5), 0.0);
        assert_abs_diff_eq!(speed_update(10.0, 1.5, 0.5), 10.75, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let p = params();
        assert!(idm_acceleration(f64::NAN, 10.0, 0.0, &p).is_err());
        assert!(idm_acceleration(5.0, f64::NAN, 0.0, &p).is_err());
        assert!(idm_acceleration(5.0, 10.0, f64::INFINITY, &p).is_err());
        assert!(idm_acceleration(5.0, 0.0, 0.0, &p).is_err());
        assert!(desired_gap(f64::INFINITY, 0.0, &p).is_err());
    }

    #[test]
    fn equilibrium_speed_zeroes_acceleration() {
        let p = params();
        let v = equilibrium_speed(30.0, &p);
        assert!(v > 0.0 && v < p.v_desired);
        assert_abs_diff_eq!(idm_raw(v, 30.0, 0.0, &p), 0.0, epsilon = 1e-9);
        assert_eq!(equilibrium_speed(1.0, &p), 0.0);
    }

    #[test]
    fn validate_rejects_nonpositive() {
        let mut p = params();
        p.decel_comf = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.accel_exp = 0.5;
        assert!(p.validate().is_err());
    }
}
