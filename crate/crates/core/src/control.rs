//! Joint-level controllers: admittance outer loop, PID position loop and the
//! contact-stop latch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest controller step accepted by [`admittance_step`] (s).
pub const MAX_CONTROL_DT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("invalid controller parameters: {0}")]
    InvalidParams(String),
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("step dt = {0} s outside (0, {MAX_CONTROL_DT}]")]
    InvalidStep(f64),
    #[error("step dt = {dt} s is at or above the explicit Euler stability bound {bound} s")]
    UnstableStep { dt: f64, bound: f64 },
}

fn finite(name: &'static str, value: f64) -> Result<f64, ControlError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ControlError::NonFinite { name, value })
    }
}

/// Desired joint impedance `M dq'' + B dq' + K dq = tau_ext - tau_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmittanceParams {
    /// kg m^2
    pub inertia: f64,
    /// Nm s/rad
    pub damping: f64,
    /// Nm/rad
    pub stiffness: f64,
    /// Constant torque offset `tau_d` (Nm).
    #[serde(default)]
    pub torque_offset: f64,
}

impl AdmittanceParams {
    /// Requires a positive-definite impedance (all three terms positive).
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, v) in [("inertia", self.inertia), ("damping", self.damping), ("stiffness", self.stiffness)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ControlError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        finite("torque_offset", self.torque_offset)?;
        Ok(())
    }

    /// Looser check used per step: inertia positive, damping and stiffness
    /// non-negative, so a free mass (`B = K = 0`) can still be integrated.
    fn check_step(&self) -> Result<(), ControlError> {
        if !(self.inertia.is_finite() && self.inertia > 0.0) {
            return Err(ControlError::InvalidParams(format!("inertia must be positive, got {}", self.inertia)));
        }
        for (name, v) in [("damping", self.damping), ("stiffness", self.stiffness)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ControlError::InvalidParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        finite("torque_offset", self.torque_offset)?;
        Ok(())
    }

    /// Largest step for which explicit Euler on the impedance is contractive.
    ///
    /// Euler multiplies each mode by `1 + h lambda`. For complex eigenvalues
    /// `|1 + h lambda| < 1` reduces to `h < B / K`; for real ones the fast
    /// eigenvalue limits `h < 2 / |lambda_fast|`. Infinite for a free mass.
    pub fn stability_bound(&self) -> f64 {
        let (m, b, k) = (self.inertia, self.damping, self.stiffness);
        if k == 0.0 {
            return if b == 0.0 { f64::INFINITY } else { 2.0 * m / b };
        }
        let disc = b * b - 4.0 * m * k;
        if disc < 0.0 {
            b / k
        } else {
            let fast = (b + disc.sqrt()) / (2.0 * m);
            2.0 / fast
        }
    }

    /// Steady deviation under a constant external torque.
    pub fn steady_deviation(&self, tau_ext: f64) -> f64 {
        (tau_ext - self.torque_offset) / self.stiffness
    }

    /// `1/2 M dq'^2 + 1/2 K dq^2`.
    pub fn lyapunov(&self, state: &LoopState) -> f64 {
        0.5 * self.inertia * state.dq_dot * state.dq_dot + 0.5 * self.stiffness * state.dq * state.dq
    }
}

/// Admittance loop state. The deviation `dq` from the desired angle is the
/// integrated quantity; `q = q_desired + dq` is the resulting position command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub q: f64,
    pub dq: f64,
    pub dq_dot: f64,
    pub dq_ddot: f64,
    pub t: f64,
}

impl LoopState {
    pub fn at(q_desired: f64) -> Self {
        Self { q: q_desired, ..Self::default() }
    }
}

/// One explicit Euler step of the admittance law on the deviation coordinate:
/// acceleration from the current state, then velocity, then position using the
/// velocity from before the update.
pub fn admittance_step(
    params: &AdmittanceParams,
    state: &LoopState,
    q_desired: f64,
    tau_ext: f64,
    dt: f64,
) -> Result<LoopState, ControlError> {
    params.check_step()?;
    finite("tau_ext", tau_ext)?;
    finite("q_desired", q_desired)?;
    if !(dt > 0.0 && dt <= MAX_CONTROL_DT) {
        return Err(ControlError::InvalidStep(dt));
    }
    let bound = params.stability_bound();
    if dt >= bound {
        return Err(ControlError::UnstableStep { dt, bound });
    }
    let acc = (tau_ext - params.torque_offset - params.damping * state.dq_dot - params.stiffness * state.dq)
        / params.inertia;
    let dq = state.dq + state.dq_dot * dt;
    let next = LoopState { q: q_desired + dq, dq, dq_dot: state.dq_dot + acc * dt, dq_ddot: acc, t: state.t + dt };
    finite("deviation", next.dq)?;
    finite("deviation rate", next.dq_dot)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidParams {
    /// Nm/rad
    pub kp: f64,
    /// Nm/(rad s)
    pub ki: f64,
    /// Nm s/rad
    pub kd: f64,
    /// Bound on the integral contribution (Nm).
    pub integral_limit: f64,
}

impl PidParams {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ControlError::InvalidParams(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.integral_limit.is_finite() && self.integral_limit > 0.0) {
            return Err(ControlError::InvalidParams(format!(
                "integral_limit must be positive, got {}",
                self.integral_limit
            )));
        }
        Ok(())
    }
}

/// PID memory. `integral` is kept in torque units (already multiplied by `ki`)
/// so the anti-windup clamp applies to the contribution itself.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// Torque command for tracking `q_desired`. The derivative term is zero on the
/// first call.
pub fn pid_step(params: &PidParams, state: &mut PidState, q: f64, q_desired: f64, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    let e = q_desired - q;
    state.integral = (state.integral + params.ki * e * dt).clamp(-params.integral_limit, params.integral_limit);
    let derivative = state.prev_error.map_or(0.0, |prev| (e - prev) / dt);
    state.prev_error = Some(e);
    params.kp * e + state.integral + params.kd * derivative
}

fn default_hysteresis() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactStopPolicy {
    /// Nm
    pub torque_threshold: f64,
    /// Release below `threshold * (1 - hysteresis)`.
    #[serde(default = "default_hysteresis")]
    pub hysteresis: f64,
}

impl Default for ContactStopPolicy {
    fn default() -> Self {
        Self { torque_threshold: 0.05, hysteresis: default_hysteresis() }
    }
}

impl ContactStopPolicy {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.torque_threshold.is_finite() && self.torque_threshold > 0.0) {
            return Err(ControlError::InvalidParams(format!(
                "torque_threshold must be positive, got {}",
                self.torque_threshold
            )));
        }
        if !(0.0..1.0).contains(&self.hysteresis) {
            return Err(ControlError::InvalidParams(format!("hysteresis must be in [0, 1), got {}", self.hysteresis)));
        }
        Ok(())
    }
}

/// Freeze-reference latch: while latched the reference is held at the value it
/// had when the estimated torque first exceeded the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactStop {
    policy: ContactStopPolicy,
    held: Option<f64>,
    transitions: usize,
}

impl ContactStop {
    pub fn new(policy: ContactStopPolicy) -> Self {
        Self { policy, held: None, transitions: 0 }
    }

    pub fn is_latched(&self) -> bool {
        self.held.is_some()
    }

    /// Number of latch/release events so far.
    pub fn transitions(&self) -> usize {
        self.transitions
    }

    pub fn apply(&mut self, tau_est: f64, reference: f64) -> f64 {
        let magnitude = tau_est.abs();
        match self.held {
            None if magnitude > self.policy.torque_threshold => {
                self.held = Some(reference);
                self.transitions += 1;
            }
            Some(_) if magnitude < self.policy.torque_threshold * (1.0 - self.policy.hysteresis) => {
                self.held = None;
                self.transitions += 1;
            }
            _ => {}
        }
        self.held.unwrap_or(reference)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(m: f64, b: f64, k: f64) -> AdmittanceParams {
        AdmittanceParams { inertia: m, damping: b, stiffness: k, torque_offset: 0.0 }
    }

    #[test]
    fn equilibrium_is_fixed() {
        let s = LoopState::at(0.3);
        let next = admittance_step(&params(1.0, 2.0, 10.0), &s, 0.3, 0.0, 0.01).unwrap();
        assert_eq!(next.dq, 0.0);
        assert_eq!(next.dq_dot, 0.0);
        assert_eq!(next.q, 0.3);
    }

    #[test]
    fn first_step_ordering() {
        let next = admittance_step(&params(1.0, 0.0, 0.0), &LoopState::default(), 0.0, 1.0, 0.01).unwrap();
        assert_eq!(next.dq_ddot, 1.0);
        assert_eq!(next.dq_dot, 0.01);
        assert_eq!(next.dq, 0.0);
    }

    #[test]
    fn euler_step_from_rest_adds_energy() {
        // at zero rate the velocity update alone raises V by dt^2 K^2 dq^2 / 2M,
        // so V only decays over many steps
        let p = params(0.01, 0.05, 11.8);
        let dt = 0.25 * p.stability_bound();
        let s = LoopState { dq: -0.36, ..LoopState::default() };
        let next = admittance_step(&p, &s, 0.0, 0.0, dt).unwrap();
        let gain = 0.5 * dt * dt * (11.8f64 * 0.36).powi(2) / 0.01;
        assert!((p.lyapunov(&next) - p.lyapunov(&s) - gain).abs() < 1e-15);
        assert!(gain > 0.0);
    }

    #[test]
    fn converges_to_compliance() {
        let p = params(1.0, 2.0, 10.0);
        let mut s = LoopState::default();
        for _ in 0..5000 {
            s = admittance_step(&p, &s, 0.0, 0.5, 0.01).unwrap();
        }
        assert!((s.dq - 0.05).abs() < 1e-6, "{}", s.dq);
    }

    #[test]
    fn stability_bounds() {
        // underdamped: B/K
        assert!((params(1.0, 2.0, 10.0).stability_bound() - 0.2).abs() < 1e-15);
        // critical: 4M/B both ways
        assert!((params(1.0, 2.0, 1.0).stability_bound() - 2.0).abs() < 1e-12);
        // overdamped: fast eigenvalue -(10 + sqrt(96))/2
        let fast = (10.0 + 96f64.sqrt()) / 2.0;
        assert!((params(1.0, 10.0, 1.0).stability_bound() - 2.0 / fast).abs() < 1e-12);
        assert!(params(1.0, 0.0, 0.0).stability_bound().is_infinite());
    }

    #[test]
    fn oversized_step_is_reported() {
        // undamped-frequency criterion: dt > 2/omega
        let p = params(1.0, 0.5, 1e4);
        let omega = 100.0;
        let err = admittance_step(&p, &LoopState::default(), 0.0, 0.1, 2.0 / omega + 0.001).unwrap_err();
        assert!(matches!(err, ControlError::UnstableStep { .. }));
        assert!(matches!(
            admittance_step(&p, &LoopState::default(), 0.0, 0.1, 0.0),
            Err(ControlError::InvalidStep(_))
        ));
    }

    #[test]
    fn non_finite_torque_rejected() {
        let err = admittance_step(&params(1.0, 2.0, 10.0), &LoopState::default(), 0.0, f64::NAN, 0.01).unwrap_err();
        assert!(matches!(err, ControlError::NonFinite { name: "tau_ext", .. }));
    }

    #[test]
    fn validate_requires_positive_definite() {
        assert!(params(1.0, 2.0, 10.0).validate().is_ok());
        assert!(params(1.0, 0.0, 10.0).validate().is_err());
    }

    #[test]
    fn pid_basics() {
        let p = PidParams { kp: 1.0, ki: 0.0, kd: 0.0, integral_limit: 1.0 };
        let mut s = PidState::default();
        assert_eq!(pid_step(&p, &mut s, 0.0, 0.5, 0.01), 0.5);
        let mut s = PidState::default();
        for _ in 0..10 {
            assert_eq!(pid_step(&p, &mut s, 0.2, 0.2, 0.01), 0.0);
        }
    }

    #[test]
    fn pid_derivative_and_integral() {
        let p = PidParams { kp: 0.0, ki: 2.0, kd: 0.1, integral_limit: 10.0 };
        let mut s = PidState::default();
        let u0 = pid_step(&p, &mut s, 0.0, 1.0, 0.01);
        assert!((u0 - 0.02).abs() < 1e-15);
        // error falls by 0.5 over 0.01 s
        let u1 = pid_step(&p, &mut s, 0.5, 1.0, 0.01);
        assert!((u1 - (0.03 + 0.1 * (-50.0))).abs() < 1e-12);
    }

    #[test]
    fn anti_windup_holds() {
        let p = PidParams { kp: 0.0, ki: 100.0, kd: 0.0, integral_limit: 0.3 };
        let mut s = PidState::default();
        for _ in 0..1000 {
            let u = pid_step(&p, &mut s, 0.0, 5.0, 0.01);
            assert!(u.abs() <= 0.3);
        }
        assert_eq!(s.integral, 0.3);
    }

    #[test]
    fn contact_stop_latches() {
        let mut cs = ContactStop::new(ContactStopPolicy::default());
        assert_eq!(cs.apply(0.0, 0.4), 0.4);
        assert_eq!(cs.apply(0.06, 0.5), 0.5);
        assert!(cs.is_latched());
        assert_eq!(cs.apply(0.06, 0.9), 0.5);
        // inside the hysteresis band: still held
        assert_eq!(cs.apply(0.046, 1.0), 0.5);
        assert_eq!(cs.apply(0.04, 1.0), 1.0);
        assert!(!cs.is_latched());
    }

    #[test]
    fn no_chattering_near_threshold() {
        let mut cs = ContactStop::new(ContactStopPolicy::default());
        for i in 0..2000 {
            let t = i as f64 * 0.01;
            let tau = 0.05 * (1.0 + 0.05 * (2.0 * std::f64::consts::PI * 3.0 * t).sin());
            cs.apply(tau, t);
        }
        assert!(cs.transitions() <= 1, "{}", cs.transitions());
    }
}
