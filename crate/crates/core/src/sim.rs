//! Closed-loop simulation: 100 Hz controller over a 1 kHz plant with a
//! zero-order hold, noisy proprioceptive measurements and an optional
//! admittance outer loop fed by a torque estimator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    admittance_step, pid_step, AdmittanceParams, ContactStop, ContactStopPolicy, ControlError, LoopState, PidParams,
    PidState,
};
use crate::geometry::{moment_arm, JointAngle};
use crate::gpr::{FeatureVector, GprModel};
use crate::muscle::{current_for_force, MuscleParams, MuscleState};
use crate::plant::{
    cable_tension, muscle_state, Actuation, ContactObject, MuscleDrive, Plant, PlantError, PlantState,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invalid loop configuration: {0}")]
    InvalidConfig(String),
}

impl From<crate::muscle::MuscleError> for SimError {
    fn from(e: crate::muscle::MuscleError) -> Self {
        SimError::Plant(e.into())
    }
}

impl From<crate::geometry::GeometryError> for SimError {
    fn from(e: crate::geometry::GeometryError) -> Self {
        SimError::Plant(e.into())
    }
}

/// Measurement noise, all standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// A
    pub current_noise_std: f64,
    /// rad (applied to positions) and rad/s (applied to velocities)
    pub encoder_noise_std: f64,
    /// Nm
    pub torque_label_noise_std: f64,
}

impl Default for NoiseModel {
    /// Encoder 0.1 deg, current 1 % of a 150 A full scale, label 1 mNm.
    fn default() -> Self {
        Self { current_noise_std: 1.5, encoder_noise_std: 0.0017, torque_label_noise_std: 0.001 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { current_noise_std: 0.0, encoder_noise_std: 0.0, torque_label_noise_std: 0.0 }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("current_noise_std", self.current_noise_std),
            ("encoder_noise_std", self.encoder_noise_std),
            ("torque_label_noise_std", self.torque_label_noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

fn default_control_dt() -> f64 {
    0.01
}
fn default_substeps() -> usize {
    10
}

/// Inner loop settings shared by every closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    /// Controller period (s).
    #[serde(default = "default_control_dt")]
    pub control_dt: f64,
    /// Plant steps per controller period.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub pid: PidParams,
    pub muscle: MuscleParams,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.control_dt > 0.0 && self.control_dt <= 0.1) {
            return Err(SimError::InvalidConfig(format!("control_dt {} outside (0, 0.1]", self.control_dt)));
        }
        if self.substeps == 0 {
            return Err(SimError::InvalidConfig("substeps must be at least 1".into()));
        }
        self.pid.validate()?;
        self.muscle.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn plant_dt(&self) -> f64 {
        self.control_dt / self.substeps as f64
    }
}

/// Anything that maps proprioceptive features to an external joint torque.
pub trait TorqueEstimator: Sync {
    fn estimate(&self, features: &FeatureVector) -> f64;
}

impl TorqueEstimator for GprModel {
    fn estimate(&self, features: &FeatureVector) -> f64 {
        self.predict_mean(features)
    }
}

impl<F: Fn(&FeatureVector) -> f64 + Sync> TorqueEstimator for F {
    fn estimate(&self, features: &FeatureVector) -> f64 {
        self(features)
    }
}

/// Piecewise-linear joint reference through `(t, q)` waypoints; held constant
/// outside the covered interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if points.is_empty() {
            return Err(SimError::InvalidConfig("trajectory needs at least one waypoint".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) || points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
            return Err(SimError::InvalidConfig("trajectory times must be finite and strictly increasing".into()));
        }
        Ok(Self { points })
    }

    pub fn hold(q: f64) -> Self {
        Self { points: vec![(0.0, q)] }
    }

    /// Triangle wave between `lo` and `hi` at constant speed, starting at `lo`.
    pub fn triangle(lo: f64, hi: f64, speed: f64, duration: f64) -> Result<Self, SimError> {
        if !(hi > lo && speed > 0.0 && duration > 0.0) {
            return Err(SimError::InvalidConfig("triangle needs hi > lo, speed > 0, duration > 0".into()));
        }
        let leg = (hi - lo) / speed;
        let mut points = vec![(0.0, lo)];
        let mut t = 0.0;
        let mut up = true;
        while t < duration {
            t += leg;
            points.push((t, if up { hi } else { lo }));
            up = !up;
        }
        Self::new(points)
    }

    /// Smooth back-and-forth sweep `lo + (hi - lo)(1 - cos wt)/2` peaking at
    /// `speed`, sampled every `step` seconds.
    pub fn cosine_sweep(lo: f64, hi: f64, speed: f64, duration: f64, step: f64) -> Result<Self, SimError> {
        if !(hi > lo && speed > 0.0 && duration > 0.0 && step > 0.0) {
            return Err(SimError::InvalidConfig("sweep needs hi > lo and positive speed, duration and step".into()));
        }
        let half = 0.5 * (hi - lo);
        let w = speed / half;
        let n = (duration / step).ceil() as usize;
        Self::new((0..=n).map(|k| (k as f64 * step, lo + half * (1.0 - (w * k as f64 * step).cos()))).collect())
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Reference angle and its rate at time `t`.
    pub fn sample(&self, t: f64) -> (f64, f64) {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if t <= first.0 {
            return (first.1, 0.0);
        }
        if t >= last.0 {
            return (last.1, 0.0);
        }
        let i = self.points.partition_point(|p| p.0 <= t);
        let (t0, q0) = self.points[i - 1];
        let (t1, q1) = self.points[i];
        let rate = (q1 - q0) / (t1 - t0);
        (q0 + rate * (t - t0), rate)
    }
}

/// Outer loop selection.
#[derive(Clone, Copy)]
pub enum OuterLoop<'a> {
    /// Track the reference directly.
    Position,
    /// Admittance on the estimated torque, with a contact-stop latch on the reference.
    Admittance { params: AdmittanceParams, stop: ContactStopPolicy, estimator: &'a dyn TorqueEstimator },
}

/// One controller tick as seen by the logger: noisy measurement, truth and
/// the commands issued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tick {
    pub t: f64,
    pub q: f64,
    pub joint_vel: f64,
    /// Reference from the trajectory.
    pub q_ref: f64,
    /// Position command after the outer loop.
    pub q_cmd: f64,
    /// Actuator torque (tension times moment arm) at the tick.
    pub tau_applied: f64,
    /// NaN when no estimator is attached.
    pub tau_estimated: f64,
    pub tau_truth: f64,
    pub features: FeatureVector,
    /// `tau_truth` plus label noise.
    pub label: f64,
}

/// Finger plant plus inner position loop and an optional outer loop.
pub struct ClosedLoop<'a> {
    plant: Plant,
    config: LoopConfig,
    contact: Option<ContactObject>,
    noise: NoiseModel,
    outer: OuterLoop<'a>,
    rng: ChaCha8Rng,
    pid: PidState,
    admittance: LoopState,
    stop: Option<ContactStop>,
    drive: MuscleDrive,
    t: f64,
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("std validated").sample(rng)
    }
}

impl<'a> ClosedLoop<'a> {
    pub fn new(
        plant: Plant,
        config: LoopConfig,
        contact: Option<ContactObject>,
        noise: NoiseModel,
        outer: OuterLoop<'a>,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        noise.validate().map_err(SimError::InvalidConfig)?;
        if let Some(o) = &contact {
            o.validate()?;
        }
        let stop = match &outer {
            OuterLoop::Position => None,
            OuterLoop::Admittance { params, stop, .. } => {
                params.validate()?;
                stop.validate()?;
                Some(ContactStop::new(*stop))
            }
        };
        let idle = MuscleDrive { params: config.muscle, current: 0.0, cable_len_desired: 0.0, cable_vel_desired: 0.0 };
        let mut lp = Self {
            admittance: LoopState::at(plant.state.joint_angle),
            plant,
            config,
            contact,
            noise,
            outer,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pid: PidState::default(),
            stop,
            drive: idle,
            t: 0.0,
        };
        // start with the cable at its measured length and no current
        let ms = muscle_state(&lp.plant.params, &lp.drive, &lp.plant.state);
        lp.drive.cable_len_desired = ms.cable_len;
        Ok(lp)
    }

    pub fn state(&self) -> &PlantState {
        &self.plant.state
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    fn measure(&mut self) -> (FeatureVector, f64, f64) {
        let s = self.plant.state;
        let n = self.noise;
        let features = FeatureVector {
            motor_current: self.drive.current + gauss(&mut self.rng, n.current_noise_std),
            motor_pos: s.motor_angle + gauss(&mut self.rng, n.encoder_noise_std),
            motor_vel: s.motor_vel + gauss(&mut self.rng, n.encoder_noise_std),
            joint_pos: s.joint_angle + gauss(&mut self.rng, n.encoder_noise_std),
            joint_vel: s.joint_vel + gauss(&mut self.rng, n.encoder_noise_std),
            temperature: s.temperature,
        };
        let truth = self.plant.ground_truth_torque(self.contact.as_ref());
        let label = truth + gauss(&mut self.rng, n.torque_label_noise_std);
        (features, truth, label)
    }

    /// Run one controller period against the reference `(q_ref, q_ref_rate)`.
    pub fn tick(&mut self, q_ref: f64, q_ref_rate: f64) -> Result<Tick, SimError> {
        let dt = self.config.control_dt;
        let (features, tau_truth, label) = self.measure();
        let state = self.plant.state;
        let params = self.plant.params;
        let routing = self.plant.routing;
        let arm_true = moment_arm(&routing, JointAngle(state.joint_angle))?.moment_arm;
        let tau_applied = cable_tension(&params, &Actuation::Muscle(self.drive), &state)? * arm_true;

        let (q_cmd, q_cmd_rate, tau_estimated) = match self.outer {
            OuterLoop::Position => (q_ref, q_ref_rate, f64::NAN),
            OuterLoop::Admittance { params: adm, estimator, .. } => {
                let tau_est = estimator.estimate(&features);
                let stop = self.stop.as_mut().expect("admittance loop owns a latch");
                let r = stop.apply(tau_est, q_ref);
                let r_rate = if stop.is_latched() { 0.0 } else { q_ref_rate };
                self.admittance = admittance_step(&adm, &self.admittance, r, -tau_est, dt)?;
                (self.admittance.q, r_rate + self.admittance.dq_dot, tau_est)
            }
        };

        // inner loop on measured signals
        let q_meas = features.joint_pos;
        let u = pid_step(&self.config.pid, &mut self.pid, q_meas, q_cmd, dt);
        let arm = moment_arm(&routing, JointAngle(params.joint_limits.clamp(q_meas)))?.moment_arm;
        let force = (u / arm).clamp(0.0, params.max_tension);
        let cable = params.cable_per_motor_rad();
        let measured = MuscleState {
            cable_len: params.cable_ref_len + cable * features.motor_pos,
            cable_len_desired: params.cable_ref_len + cable * features.motor_pos + arm * (q_cmd - q_meas),
            cable_vel: cable * features.motor_vel,
            cable_vel_desired: arm * q_cmd_rate,
            spring_len: self.config.muscle.preload_len + (cable * features.motor_pos).max(0.0),
            current: 0.0,
        };
        let current = current_for_force(&self.config.muscle, &measured, force)?;
        self.drive = MuscleDrive {
            params: self.config.muscle,
            current,
            cable_len_desired: measured.cable_len_desired,
            cable_vel_desired: measured.cable_vel_desired,
        };

        let h = self.config.plant_dt();
        let actuation = Actuation::Muscle(self.drive);
        for _ in 0..self.config.substeps {
            self.plant.step(&actuation, self.contact.as_ref(), h)?;
        }
        let tick = Tick {
            t: self.t,
            q: state.joint_angle,
            joint_vel: state.joint_vel,
            q_ref,
            q_cmd,
            tau_applied,
            tau_estimated,
            tau_truth,
            features,
            label,
        };
        self.t += dt;
        Ok(tick)
    }

    /// Follow `trajectory` for `duration` seconds, returning every tick.
    pub fn run(&mut self, trajectory: &Trajectory, duration: f64) -> Result<Vec<Tick>, SimError> {
        let n = (duration / self.config.control_dt).round() as usize;
        let start = self.t;
        (0..n)
            .map(|k| {
                let (q, rate) = trajectory.sample(start + k as f64 * self.config.control_dt);
                self.tick(q, rate)
            })
            .collect()
    }
}
