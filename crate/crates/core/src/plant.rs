//! Single-joint finger plant: rotor-plus-link inertia driven through the
//! tendon, a hanging weight, friction and a compliant contact.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{moment_arm, GeometryError, JointAngle, JointLimits, TendonRouting};
use crate::muscle::{tendon_force, MuscleError, MuscleParams, MuscleState};

/// Largest plant step accepted (s).
pub const MAX_PLANT_DT: f64 = 0.01;
/// Penetration over which contact damping fades in, keeping the force continuous (m).
pub const CONTACT_DAMPING_RAMP: f64 = 1e-3;
/// Reference temperature of the friction law (deg C).
pub const REFERENCE_TEMPERATURE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
    #[error("invalid contact object: {0}")]
    InvalidObject(String),
    #[error("plant step dt = {0} s outside (0, {MAX_PLANT_DT}]")]
    InvalidStep(f64),
    #[error("simulation diverged at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Muscle(#[from] MuscleError),
}

fn default_gravity() -> f64 {
    9.81
}
fn default_temp_coeff() -> f64 {
    -0.005
}
fn default_smoothing() -> f64 {
    1e-3
}
fn default_max_tension() -> f64 {
    150.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// Joint-side inertia without the hanging weight (kg m^2).
    pub inertia: f64,
    /// Nm s/rad at the reference temperature.
    pub viscous_friction: f64,
    /// Nm
    pub coulomb_friction: f64,
    /// Hanging weight (kg); zero for grasping.
    pub weight_mass: f64,
    /// Lever of the hanging weight (m).
    pub weight_arm: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub motor_gear_ratio: f64,
    /// Capstan drum radius (m).
    pub capstan_radius: f64,
    /// Joint axis to fingertip contact point (m).
    pub fingertip_lever: f64,
    /// Relative change of viscous friction per deg C.
    #[serde(default = "default_temp_coeff")]
    pub friction_temp_coeff: f64,
    /// Coulomb smoothing velocity (rad/s).
    #[serde(default = "default_smoothing")]
    pub coulomb_smoothing: f64,
    /// Hard stops.
    pub joint_limits: JointLimits,
    /// Tension ceiling of the actuator (N).
    #[serde(default = "default_max_tension")]
    pub max_tension: f64,
    /// Cable length at zero motor angle (m).
    pub cable_ref_len: f64,
    /// Passive extensor spring opposing flexion (Nm/rad).
    #[serde(default)]
    pub extensor_stiffness: f64,
    /// Extensor torque at zero joint angle (Nm).
    #[serde(default)]
    pub extensor_preload: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            inertia: 1e-3,
            viscous_friction: 2e-3,
            coulomb_friction: 2e-3,
            weight_mass: 0.0,
            weight_arm: 0.05,
            gravity: default_gravity(),
            motor_gear_ratio: 50.0,
            capstan_radius: 0.005,
            fingertip_lever: 0.05,
            friction_temp_coeff: default_temp_coeff(),
            coulomb_smoothing: default_smoothing(),
            joint_limits: JointLimits { lo: -0.2, hi: 1.7 },
            max_tension: default_max_tension(),
            cable_ref_len: 0.1,
            extensor_stiffness: 0.1,
            extensor_preload: 0.05,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |msg: String| Err(PlantError::InvalidParams(msg));
        let positive = [
            ("inertia", self.inertia),
            ("motor_gear_ratio", self.motor_gear_ratio),
            ("capstan_radius", self.capstan_radius),
            ("fingertip_lever", self.fingertip_lever),
            ("coulomb_smoothing", self.coulomb_smoothing),
            ("max_tension", self.max_tension),
            ("cable_ref_len", self.cable_ref_len),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("viscous_friction", self.viscous_friction),
            ("coulomb_friction", self.coulomb_friction),
            ("weight_mass", self.weight_mass),
            ("weight_arm", self.weight_arm),
            ("gravity", self.gravity),
            ("extensor_stiffness", self.extensor_stiffness),
            ("extensor_preload", self.extensor_preload),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !self.friction_temp_coeff.is_finite() {
            return bad("friction_temp_coeff must be finite".into());
        }
        self.joint_limits.validate()?;
        Ok(())
    }

    /// Inertia seen by the joint, including the hanging weight as a point mass.
    pub fn effective_inertia(&self) -> f64 {
        self.inertia + self.weight_mass * self.weight_arm * self.weight_arm
    }

    /// Viscous coefficient at temperature `t`, floored at zero.
    pub fn viscous_at(&self, temperature: f64) -> f64 {
        (self.viscous_friction * (1.0 + self.friction_temp_coeff * (temperature - REFERENCE_TEMPERATURE))).max(0.0)
    }

    /// Cable taken up per motor radian.
    pub fn cable_per_motor_rad(&self) -> f64 {
        self.capstan_radius / self.motor_gear_ratio
    }
}

/// Torque of the hanging weight resisting flexion: `m g arm cos(theta)`.
pub fn gravity_torque(params: &PlantParams, joint_angle: f64) -> f64 {
    params.weight_mass * params.gravity * params.weight_arm * joint_angle.cos()
}

/// Potential energy of the weight, zero with the lever hanging straight down.
pub fn gravity_potential(params: &PlantParams, joint_angle: f64) -> f64 {
    params.weight_mass * params.gravity * params.weight_arm * (1.0 + joint_angle.sin())
}

/// Torque of the passive extensor, resisting flexion: `preload + k q`.
pub fn extensor_torque(params: &PlantParams, joint_angle: f64) -> f64 {
    params.extensor_preload + params.extensor_stiffness * joint_angle
}

/// Kinetic, gravitational and extensor-spring energy.
pub fn mechanical_energy(params: &PlantParams, state: &PlantState) -> f64 {
    let q = state.joint_angle;
    let spring = params.extensor_preload * q + 0.5 * params.extensor_stiffness * q * q;
    0.5 * params.effective_inertia() * state.joint_vel * state.joint_vel + gravity_potential(params, q) + spring
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Wood,
    Fruit,
    Bottle,
    Cup,
    Tissue,
    Plush,
}

impl ObjectKind {
    /// Hard to soft.
    pub const ALL: [ObjectKind; 6] =
        [ObjectKind::Wood, ObjectKind::Fruit, ObjectKind::Bottle, ObjectKind::Cup, ObjectKind::Tissue, ObjectKind::Plush];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Wood => "wood",
            ObjectKind::Fruit => "fruit",
            ObjectKind::Bottle => "bottle",
            ObjectKind::Cup => "cup",
            ObjectKind::Tissue => "tissue",
            ObjectKind::Plush => "plush",
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grasped object, seen as a spring-damper at the fingertip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactObject {
    pub label: ObjectKind,
    /// N/m at the fingertip. Zero gives a placeholder that never pushes back.
    pub stiffness: f64,
    /// N s/m
    pub damping: f64,
    /// Joint angle at which the fingertip touches the surface (rad).
    pub engage_angle: f64,
}

impl ContactObject {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.stiffness.is_finite() && self.stiffness >= 0.0) {
            return Err(PlantError::InvalidObject(format!("stiffness must be non-negative, got {}", self.stiffness)));
        }
        if !(self.damping.is_finite() && self.damping >= 0.0) {
            return Err(PlantError::InvalidObject(format!("damping must be non-negative, got {}", self.damping)));
        }
        if !self.engage_angle.is_finite() {
            return Err(PlantError::InvalidObject("engage_angle must be finite".into()));
        }
        Ok(())
    }
}

/// Joint torque from the object: zero before engagement, then
/// `r * max(k delta + s(delta) c delta_dot, 0)` with `delta = r (q - q_engage)`
/// and `s` ramping the damper in over [`CONTACT_DAMPING_RAMP`].
pub fn contact_torque(params: &PlantParams, object: &ContactObject, joint_angle: f64, joint_vel: f64) -> f64 {
    let r = params.fingertip_lever;
    let delta = r * (joint_angle - object.engage_angle);
    if delta <= 0.0 {
        return 0.0;
    }
    let ramp = (delta / CONTACT_DAMPING_RAMP).min(1.0);
    let force = object.stiffness * delta + ramp * object.damping * r * joint_vel;
    force.max(0.0) * r
}

/// External torque on the joint (weight plus contact), positive when resisting
/// flexion. This is the label the estimator learns.
pub fn ground_truth_torque(params: &PlantParams, state: &PlantState, contact: Option<&ContactObject>) -> f64 {
    let contact = contact.map_or(0.0, |o| contact_torque(params, o, state.joint_angle, state.joint_vel));
    gravity_torque(params, state.joint_angle) + contact
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub joint_angle: f64,
    pub joint_vel: f64,
    pub motor_angle: f64,
    pub motor_vel: f64,
    pub temperature: f64,
}

impl PlantState {
    /// At rest at `joint_angle`, with the motor angle consistent with the
    /// cable taken up since zero joint angle.
    pub fn at_rest(
        params: &PlantParams,
        routing: &TendonRouting,
        joint_angle: f64,
        temperature: f64,
    ) -> Result<Self, PlantError> {
        let taken_up = cable_take_up(routing, 0.0, joint_angle)?;
        Ok(Self {
            joint_angle,
            joint_vel: 0.0,
            motor_angle: taken_up / params.cable_per_motor_rad(),
            motor_vel: 0.0,
            temperature,
        })
    }

    fn is_finite(&self) -> bool {
        [self.joint_angle, self.joint_vel, self.motor_angle, self.motor_vel, self.temperature]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Cable drawn in while the joint moves from `from` to `to`: the integral of the
/// moment arm, by 8-point Gauss-Legendre quadrature.
pub fn cable_take_up(routing: &TendonRouting, from: f64, to: f64) -> Result<f64, GeometryError> {
    const NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
    const WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
    let mid = 0.5 * (from + to);
    let half = 0.5 * (to - from);
    let mut sum = 0.0;
    for (x, w) in NODES.iter().zip(WEIGHTS) {
        sum += w * moment_arm(routing, JointAngle(mid + half * x))?.moment_arm;
        sum += w * moment_arm(routing, JointAngle(mid - half * x))?.moment_arm;
    }
    Ok(half * sum)
}

/// Motor command held over a plant step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuscleDrive {
    pub params: MuscleParams,
    /// A
    pub current: f64,
    /// Desired drawn-in cable length (m).
    pub cable_len_desired: f64,
    /// m/s
    pub cable_vel_desired: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Actuation {
    None,
    /// Prescribed cable tension (N).
    Tension(f64),
    /// Tension from the muscle law with the given command.
    Muscle(MuscleDrive),
}

/// Muscle kinematics for the current plant state. Cable length counts cable
/// drawn in by the motor, so a desired length above the actual one pulls
/// harder; the series spring stretches by the same take-up.
pub fn muscle_state(params: &PlantParams, drive: &MuscleDrive, state: &PlantState) -> MuscleState {
    let taken_up = params.cable_per_motor_rad() * state.motor_angle;
    MuscleState {
        cable_len: params.cable_ref_len + taken_up,
        cable_len_desired: drive.cable_len_desired,
        cable_vel: params.cable_per_motor_rad() * state.motor_vel,
        cable_vel_desired: drive.cable_vel_desired,
        spring_len: drive.params.preload_len + taken_up.max(0.0),
        current: drive.current,
    }
}

/// Cable tension for the given actuation, capped at `max_tension`.
pub fn cable_tension(params: &PlantParams, actuation: &Actuation, state: &PlantState) -> Result<f64, PlantError> {
    let raw = match actuation {
        Actuation::None => 0.0,
        Actuation::Tension(f) => {
            if !(f.is_finite() && *f >= 0.0) {
                return Err(GeometryError::InvalidTension(*f).into());
            }
            *f
        }
        Actuation::Muscle(drive) => tendon_force(&drive.params, &muscle_state(params, drive, state))?,
    };
    Ok(raw.min(params.max_tension))
}

struct Dynamics<'a> {
    params: &'a PlantParams,
    actuation: &'a Actuation,
    contact: Option<&'a ContactObject>,
    viscous: f64,
}

impl Dynamics<'_> {
    /// Torque terms treated explicitly: tendon drive, weight and contact.
    fn explicit_torque(&self, state: &PlantState, arm: f64) -> Result<f64, PlantError> {
        let tension = cable_tension(self.params, self.actuation, state)?;
        let contact =
            self.contact.map_or(0.0, |o| contact_torque(self.params, o, state.joint_angle, state.joint_vel));
        let q = state.joint_angle;
        Ok(tension * arm - gravity_torque(self.params, q) - extensor_torque(self.params, q) - contact)
    }

    /// Friction torque and its slope in velocity.
    fn friction(&self, v: f64) -> (f64, f64) {
        let p = self.params;
        let eps = p.coulomb_smoothing;
        let th = (v / eps).tanh();
        (self.viscous * v + p.coulomb_friction * th, self.viscous + p.coulomb_friction * (1.0 - th * th) / eps)
    }

    /// Half kick: explicit forcing, friction linearized about the current velocity.
    fn kick(&self, state: &PlantState, arm: f64, half_dt: f64, inertia: f64) -> Result<f64, PlantError> {
        let tau = self.explicit_torque(state, arm)?;
        let (f, df) = self.friction(state.joint_vel);
        Ok(state.joint_vel + half_dt * (tau - f) / (inertia + half_dt * df))
    }
}

/// Advance the plant by `dt` with the actuation held constant.
///
/// Kick-drift-kick (velocity Verlet) on the joint; friction enters each half
/// kick linearly-implicitly so the smoothed Coulomb term stays stable at
/// millisecond steps. The motor follows the cable: its angle grows by the
/// trapezoidal take-up over the joint displacement. Hard stops clamp the angle
/// and zero the velocity.
pub fn plant_step(
    params: &PlantParams,
    state: &PlantState,
    routing: &TendonRouting,
    actuation: &Actuation,
    contact: Option<&ContactObject>,
    dt: f64,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt <= MAX_PLANT_DT) {
        return Err(PlantError::InvalidStep(dt));
    }
    let dynamics = Dynamics { params, actuation, contact, viscous: params.viscous_at(state.temperature) };
    let inertia = params.effective_inertia();
    let h2 = 0.5 * dt;
    let cable = params.cable_per_motor_rad();

    let arm0 = moment_arm(routing, JointAngle(state.joint_angle))?.moment_arm;
    let v_half = dynamics.kick(state, arm0, h2, inertia)?;

    let limits = &params.joint_limits;
    let q_free = state.joint_angle + dt * v_half;
    let q = limits.clamp(q_free);
    let stopped = q != q_free;
    let arm1 = moment_arm(routing, JointAngle(q))?.moment_arm;
    let motor_angle = state.motor_angle + 0.5 * (arm0 + arm1) * (q - state.joint_angle) / cable;

    let mid = PlantState {
        joint_angle: q,
        joint_vel: if stopped { 0.0 } else { v_half },
        motor_angle,
        motor_vel: arm1 * v_half / cable,
        temperature: state.temperature,
    };
    let v = if stopped { 0.0 } else { dynamics.kick(&mid, arm1, h2, inertia)? };
    Ok(PlantState { joint_vel: v, motor_vel: arm1 * v / cable, ..mid })
}

/// Plant instance that counts steps so divergence can be reported by index.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    pub routing: TendonRouting,
    pub state: PlantState,
    step: u64,
}

impl Plant {
    pub fn new(params: PlantParams, routing: TendonRouting, state: PlantState) -> Result<Self, PlantError> {
        params.validate()?;
        routing.validate()?;
        Ok(Self { params, routing, state, step: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, actuation: &Actuation, contact: Option<&ContactObject>, dt: f64) -> Result<&PlantState, PlantError> {
        let next = plant_step(&self.params, &self.state, &self.routing, actuation, contact, dt).map_err(|e| match e {
            PlantError::Geometry(_) | PlantError::Muscle(_) if !self.state.is_finite() => {
                PlantError::Diverged { step: self.step }
            }
            other => other,
        })?;
        self.step += 1;
        if !next.is_finite() {
            return Err(PlantError::Diverged { step: self.step });
        }
        self.state = next;
        Ok(&self.state)
    }

    pub fn ground_truth_torque(&self, contact: Option<&ContactObject>) -> f64 {
        ground_truth_torque(&self.params, &self.state, contact)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn routing() -> TendonRouting {
        TendonRouting {
            pulley_offset_len: 0.012,
            anchor_offset_len: 0.010,
            anchor_angle: 0.3,
            pulley_angle: 2.2,
            pulley_radius: 0.003,
        }
    }

    fn free_params() -> PlantParams {
        PlantParams {
            viscous_friction: 0.0,
            coulomb_friction: 0.0,
            extensor_stiffness: 0.0,
            extensor_preload: 0.0,
            joint_limits: JointLimits { lo: -10.0, hi: 10.0 },
            ..PlantParams::default()
        }
    }

    #[test]
    fn stationary_without_forces() {
        let p = free_params();
        let mut s = PlantState::at_rest(&p, &routing(), 0.4, 20.0).unwrap();
        let start = s;
        for _ in 0..1000 {
            s = plant_step(&p, &s, &routing(), &Actuation::None, None, 1e-3).unwrap();
        }
        assert_eq!(s, start);
    }

    #[test]
    fn ground_truth_examples() {
        let p = PlantParams { weight_mass: 0.5, weight_arm: 0.08, ..PlantParams::default() };
        let mut s = PlantState::at_rest(&p, &routing(), 0.0, 20.0).unwrap();
        assert!((ground_truth_torque(&p, &s, None) - 0.3924).abs() < 1e-12);
        s.joint_angle = std::f64::consts::FRAC_PI_2;
        assert!(ground_truth_torque(&p, &s, None).abs() < 1e-12);
    }

    #[test]
    fn contact_is_zero_before_engagement_and_continuous() {
        let p = PlantParams::default();
        let o = ContactObject { label: ObjectKind::Wood, stiffness: 5e4, damping: 5.0, engage_angle: 0.8 };
        assert_eq!(contact_torque(&p, &o, 0.8, 1.0), 0.0);
        assert_eq!(contact_torque(&p, &o, 0.5, -3.0), 0.0);
        let just_after = contact_torque(&p, &o, 0.8 + 1e-12, 1.0);
        assert!(just_after < 1e-8);
        // the same code path backs the label
        let s = PlantState { joint_angle: 0.9, joint_vel: 0.2, motor_angle: 0.0, motor_vel: 0.0, temperature: 20.0 };
        assert_eq!(ground_truth_torque(&p, &s, Some(&o)), contact_torque(&p, &o, 0.9, 0.2));
    }

    #[test]
    fn friction_falls_with_temperature() {
        let p = PlantParams::default();
        assert_eq!(p.viscous_at(20.0), p.viscous_friction);
        assert!((p.viscous_at(50.0) - p.viscous_friction * 0.85).abs() < 1e-15);
    }

    #[test]
    fn take_up_matches_fine_trapezoid() {
        let r = routing();
        let coarse = cable_take_up(&r, 0.0, 1.2).unwrap();
        let n = 20000;
        let h = 1.2 / n as f64;
        let fine: f64 = (0..n)
            .map(|i| {
                let a = moment_arm(&r, JointAngle(i as f64 * h)).unwrap().moment_arm;
                let b = moment_arm(&r, JointAngle((i + 1) as f64 * h)).unwrap().moment_arm;
                0.5 * (a + b) * h
            })
            .sum();
        assert!((coarse - fine).abs() < 1e-9, "{coarse} vs {fine}");
    }

    #[test]
    fn motor_tracks_joint_through_cable() {
        let p = PlantParams { weight_mass: 0.2, ..PlantParams::default() };
        let r = routing();
        let mut s = PlantState::at_rest(&p, &r, 0.2, 30.0).unwrap();
        for _ in 0..2000 {
            s = plant_step(&p, &s, &r, &Actuation::Tension(40.0), None, 1e-3).unwrap();
        }
        let expected = PlantState::at_rest(&p, &r, s.joint_angle, 30.0).unwrap().motor_angle;
        assert!((s.motor_angle - expected).abs() < 1e-3 * expected.abs().max(1.0));
    }

    #[test]
    fn hard_stop_clamps() {
        let p = PlantParams::default();
        let r = routing();
        let mut s = PlantState::at_rest(&p, &r, 1.6, 20.0).unwrap();
        for _ in 0..500 {
            s = plant_step(&p, &s, &r, &Actuation::Tension(100.0), None, 1e-3).unwrap();
            assert!(s.joint_angle <= p.joint_limits.hi);
        }
        assert_eq!(s.joint_angle, p.joint_limits.hi);
        assert_eq!(s.joint_vel, 0.0);
    }

    #[test]
    fn rejects_bad_steps() {
        let p = PlantParams::default();
        let s = PlantState::at_rest(&p, &routing(), 0.0, 20.0).unwrap();
        assert!(matches!(
            plant_step(&p, &s, &routing(), &Actuation::None, None, 0.02),
            Err(PlantError::InvalidStep(_))
        ));
    }

    #[test]
    fn divergence_reports_step() {
        let p = PlantParams::default();
        let s = PlantState::at_rest(&p, &routing(), 0.0, 20.0).unwrap();
        let mut plant = Plant::new(p, routing(), s).unwrap();
        plant.step(&Actuation::None, None, 1e-3).unwrap();
        plant.state.joint_vel = f64::NAN;
        assert!(matches!(plant.step(&Actuation::None, None, 1e-3), Err(PlantError::Diverged { .. })));
    }
}
