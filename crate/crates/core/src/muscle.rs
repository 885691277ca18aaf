//! Artificial-muscle tendon force law.
//!
//! `F = g I + exp(kp (l_des - l)) + (kd1 g I + kd2) (v_des - v) + ks (l_s - l_m)`,
//! clamped at zero because a cable cannot push. `g` is the current-to-force
//! gain (1 N/A keeps the law literal). Fibres are taken as unpennated, so no
//! cosine projection appears.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponent above which the position term is considered a runaway.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MuscleError {
    #[error("invalid muscle parameters: {0}")]
    InvalidParams(String),
    #[error("invalid muscle state: {0}")]
    InvalidState(String),
    #[error("position term saturated: kp * (l_des - l) = {exponent} exceeds {MAX_EXPONENT} (runaway tracking error)")]
    Saturated { exponent: f64 },
}

fn unit_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleParams {
    /// Position gain on cable length error (1/m).
    pub kp: f64,
    /// Current-scaled velocity gain (N s / (A m)).
    pub kd1: f64,
    /// Velocity gain (N s / m).
    pub kd2: f64,
    /// Passive spring stiffness (N/m).
    pub ks: f64,
    /// Preloaded spring length (m).
    pub preload_len: f64,
    /// Current-to-force gain (N/A).
    #[serde(default = "unit_gain")]
    pub current_gain: f64,
}

impl MuscleParams {
    pub fn validate(&self) -> Result<(), MuscleError> {
        for (name, v) in [("kp", self.kp), ("kd1", self.kd1), ("kd2", self.kd2), ("ks", self.ks)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(MuscleError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.preload_len.is_finite() && self.preload_len > 0.0) {
            return Err(MuscleError::InvalidParams(format!(
                "preload_len must be positive, got {}",
                self.preload_len
            )));
        }
        if !(self.current_gain.is_finite() && self.current_gain > 0.0) {
            return Err(MuscleError::InvalidParams(format!(
                "current_gain must be positive, got {}",
                self.current_gain
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleState {
    pub cable_len: f64,
    pub cable_len_desired: f64,
    pub cable_vel: f64,
    pub cable_vel_desired: f64,
    pub spring_len: f64,
    pub current: f64,
}

impl MuscleState {
    pub fn validate(&self) -> Result<(), MuscleError> {
        let fields = [
            ("cable_len", self.cable_len),
            ("cable_len_desired", self.cable_len_desired),
            ("cable_vel", self.cable_vel),
            ("cable_vel_desired", self.cable_vel_desired),
            ("spring_len", self.spring_len),
            ("current", self.current),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(MuscleError::InvalidState(format!("{name} is not finite")));
        }
        if self.cable_len <= 0.0 {
            return Err(MuscleError::InvalidState(format!("cable_len must be positive, got {}", self.cable_len)));
        }
        if self.spring_len <= 0.0 {
            return Err(MuscleError::InvalidState(format!(
                "spring_len must be positive, got {}",
                self.spring_len
            )));
        }
        Ok(())
    }

    fn velocity_error(&self) -> f64 {
        self.cable_vel_desired - self.cable_vel
    }
}

/// Unclamped force law with inputs assumed valid.
fn raw_force(params: &MuscleParams, state: &MuscleState) -> Result<f64, MuscleError> {
    let exponent = params.kp * (state.cable_len_desired - state.cable_len);
    if exponent > MAX_EXPONENT {
        return Err(MuscleError::Saturated { exponent });
    }
    let drive = params.current_gain * state.current;
    Ok(drive
        + exponent.exp()
        + (params.kd1 * drive + params.kd2) * state.velocity_error()
        + params.ks * (state.spring_len - params.preload_len))
}

/// Tendon force in newtons, never negative.
pub fn tendon_force(params: &MuscleParams, state: &MuscleState) -> Result<f64, MuscleError> {
    params.validate()?;
    state.validate()?;
    Ok(raw_force(params, state)?.max(0.0))
}

/// Force of the idle muscle (no current, velocities matched) at a given spring stretch.
pub fn passive_force(params: &MuscleParams, stretch: f64) -> f64 {
    (1.0 + params.ks * stretch).max(0.0)
}

/// Current that makes the force law produce `target_force` for the given
/// kinematics (the `current` field of `state` is ignored).
///
/// The law is affine in current with slope `g (1 + kd1 (v_des - v))`; when that
/// slope is not positive the current is set to zero.
pub fn current_for_force(params: &MuscleParams, state: &MuscleState, target_force: f64) -> Result<f64, MuscleError> {
    let idle = MuscleState { current: 0.0, ..*state };
    let offset = raw_force(params, &idle)?;
    let slope = params.current_gain * (1.0 + params.kd1 * state.velocity_error());
    if slope <= f64::EPSILON {
        return Ok(0.0);
    }
    Ok((target_force - offset) / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MuscleParams {
        MuscleParams { kp: 50.0, kd1: 1.0, kd2: 2.0, ks: 100.0, preload_len: 0.02, current_gain: 1.0 }
    }

    fn matched(current: f64) -> MuscleState {
        MuscleState {
            cable_len: 0.05,
            cable_len_desired: 0.05,
            cable_vel: 0.0,
            cable_vel_desired: 0.0,
            spring_len: 0.02,
            current,
        }
    }

    #[test]
    fn zero_error_gives_unit_force() {
        assert_eq!(tendon_force(&params(), &matched(0.0)).unwrap(), 1.0);
    }

    #[test]
    fn current_adds_directly() {
        assert_eq!(tendon_force(&params(), &matched(2.0)).unwrap(), 3.0);
    }

    #[test]
    fn hand_evaluated_case() {
        let s = MuscleState {
            cable_len: 0.05,
            cable_len_desired: 0.06,
            cable_vel: 0.0,
            cable_vel_desired: 0.1,
            spring_len: 0.025,
            current: 1.0,
        };
        let f = tendon_force(&params(), &s).unwrap();
        // 1 + e^0.5 + 3 * 0.1 + 100 * 0.005
        assert!((f - 3.448_721_270_700_128).abs() < 1e-9, "{f}");
    }

    #[test]
    fn force_is_clamped_at_zero() {
        let s = MuscleState { cable_vel_desired: -5.0, ..matched(0.0) };
        assert_eq!(tendon_force(&params(), &s).unwrap(), 0.0);
    }

    #[test]
    fn runaway_exponent_is_reported() {
        let s = MuscleState { cable_len_desired: 0.05 + 15.0, ..matched(0.0) };
        assert!(matches!(tendon_force(&params(), &s), Err(MuscleError::Saturated { .. })));
    }

    #[test]
    fn invalid_inputs_rejected() {
        let bad = MuscleParams { kp: 0.0, ..params() };
        assert!(matches!(tendon_force(&bad, &matched(0.0)), Err(MuscleError::InvalidParams(_))));
        let s = MuscleState { spring_len: 0.0, ..matched(0.0) };
        assert!(matches!(tendon_force(&params(), &s), Err(MuscleError::InvalidState(_))));
        let s = MuscleState { current: f64::NAN, ..matched(0.0) };
        assert!(matches!(tendon_force(&params(), &s), Err(MuscleError::InvalidState(_))));
    }

    #[test]
    fn passive_curve() {
        let p = params();
        assert_eq!(passive_force(&p, 0.0), 1.0);
        assert!((passive_force(&p, 0.01) - 2.0).abs() < 1e-12);
        assert!(passive_force(&p, 0.001) <= passive_force(&p, 0.002));
        // agrees with the full law at matched kinematics
        let s = MuscleState { spring_len: p.preload_len + 0.004, ..matched(0.0) };
        assert!((tendon_force(&p, &s).unwrap() - passive_force(&p, 0.004)).abs() < 1e-12);
    }

    #[test]
    fn inverse_recovers_current() {
        let p = params();
        let s = MuscleState {
            cable_len: 0.05,
            cable_len_desired: 0.051,
            cable_vel: 0.01,
            cable_vel_desired: 0.02,
            spring_len: 0.021,
            current: 0.0,
        };
        let i = current_for_force(&p, &s, 12.5).unwrap();
        let f = tendon_force(&p, &MuscleState { current: i, ..s }).unwrap();
        assert!((f - 12.5).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_current_by_finite_difference() {
        let p = params();
        let s = MuscleState { cable_vel_desired: 0.3, ..matched(1.0) };
        let h = 1e-6;
        let f0 = tendon_force(&p, &s).unwrap();
        let f1 = tendon_force(&p, &MuscleState { current: s.current + h, ..s }).unwrap();
        let slope = (f1 - f0) / h;
        assert!((slope - (1.0 + p.kd1 * 0.3)).abs() < 1e-6);
    }

    #[test]
    fn exponential_slope_matches_analytic() {
        let p = params();
        for err in [-0.01, 0.0, 0.004, 0.02] {
            let s = MuscleState { cable_len_desired: 0.05 + err, ..matched(0.5) };
            let h = 1e-7;
            let f0 = tendon_force(&p, &s).unwrap();
            let f1 = tendon_force(&p, &MuscleState { cable_len_desired: s.cable_len_desired + h, ..s }).unwrap();
            let fd = (f1 - f0) / h;
            let analytic = p.kp * (p.kp * err).exp();
            assert!(fd > 0.0);
            assert!((fd - analytic).abs() / analytic < 1e-4, "{fd} vs {analytic}");
        }
    }
}
