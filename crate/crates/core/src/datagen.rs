//! Calibration corpora from the simulated finger: weight lifting at constant
//! velocity over a grid of loads and temperatures, plus randomized grasps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::TendonRouting;
use crate::gpr::{SampleRecord, CORPUS_HEADER};
use crate::plant::{ContactObject, Plant, PlantParams, PlantState};
use crate::sim::{ClosedLoop, LoopConfig, NoiseModel, OuterLoop, SimError, Tick, Trajectory};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("{cell}: {source}")]
    Simulation {
        cell: String,
        #[source]
        source: SimError,
    },
    #[error("{cell}, tick {tick}: {reason}")]
    OutOfBand { cell: String, tick: usize, reason: String },
}

/// SplitMix64 finalizer, used to derive independent per-cell seeds.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p.wrapping_mul(0xd1b5_4a32_d192_ed03));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// One simulated joint: routing, plant and inner-loop settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSetup {
    pub label: String,
    pub routing: TendonRouting,
    pub plant: PlantParams,
    pub control: LoopConfig,
}

impl JointSetup {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let cell = format!("joint {}", self.label);
        let wrap = |e: SimError| DatagenError::Simulation { cell: cell.clone(), source: e };
        self.routing.validate().map_err(|e| wrap(SimError::from(e)))?;
        self.plant.validate().map_err(|e| wrap(e.into()))?;
        self.control.validate().map_err(wrap)?;
        Ok(())
    }
}

fn default_repetitions() -> usize {
    1
}
fn default_settle() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationProtocol {
    /// kg
    pub load_min: f64,
    pub load_max: f64,
    pub load_step: f64,
    /// s
    pub duration_per_load: f64,
    /// Hz
    pub sample_rate: f64,
    /// deg C
    pub temperatures: Vec<f64>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    pub seed: u64,
    /// Lower and upper joint angle of the lifting sweep (rad).
    pub sweep: (f64, f64),
    /// Peak speed of the cosine sweep (rad/s).
    pub lift_speed: f64,
    /// Unrecorded hold at the start of each cell (s).
    #[serde(default = "default_settle")]
    pub settle_time: f64,
}

impl Default for CalibrationProtocol {
    fn default() -> Self {
        Self {
            load_min: 0.05,
            load_max: 1.0,
            load_step: 0.05,
            duration_per_load: 30.0,
            sample_rate: 100.0,
            temperatures: vec![20.0, 30.0, 40.0, 50.0],
            repetitions: 1,
            seed: 0,
            sweep: (0.1, 1.2),
            lift_speed: 0.25,
            settle_time: default_settle(),
        }
    }
}

impl CalibrationProtocol {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidProtocol(m));
        if !(self.load_min.is_finite() && self.load_min >= 0.0 && self.load_max >= self.load_min) {
            return bad(format!("need 0 <= load_min <= load_max, got {} and {}", self.load_min, self.load_max));
        }
        if !(self.load_step.is_finite() && self.load_step > 0.0) {
            return bad(format!("load_step must be positive, got {}", self.load_step));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad(format!("sample_rate must be positive, got {}", self.sample_rate));
        }
        if !(self.duration_per_load.is_finite() && self.duration_per_load > 0.0) {
            return bad("duration_per_load must be positive".into());
        }
        if self.temperatures.is_empty() || self.repetitions == 0 {
            return bad("need at least one temperature and one repetition".into());
        }
        if !(self.sweep.1 > self.sweep.0 && self.lift_speed > 0.0 && self.settle_time >= 0.0) {
            return bad("need sweep.1 > sweep.0, lift_speed > 0 and settle_time >= 0".into());
        }
        Ok(())
    }

    pub fn loads(&self) -> Vec<f64> {
        let n = ((self.load_max - self.load_min) / self.load_step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.load_min + i as f64 * self.load_step).collect()
    }

    pub fn samples_per_cell(&self) -> usize {
        (self.duration_per_load * self.sample_rate).round() as usize
    }

    /// loads x temperatures x samples per cell x repetitions.
    pub fn expected_rows(&self) -> usize {
        self.loads().len() * self.temperatures.len() * self.samples_per_cell() * self.repetitions
    }
}

/// Controller ticks per recorded sample.
fn decimation(control_dt: f64, sample_rate: f64) -> Result<usize, DatagenError> {
    let ratio = 1.0 / (sample_rate * control_dt);
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-6 {
        return Err(DatagenError::InvalidProtocol(format!(
            "sample period 1/{sample_rate} s is not a whole number of controller periods ({control_dt} s)"
        )));
    }
    Ok(k as usize)
}

fn check_tick(joint: &JointSetup, noise: &NoiseModel, cell: &str, index: usize, record: &SampleRecord) -> Result<(), DatagenError> {
    let out = |reason: String| DatagenError::OutOfBand { cell: cell.to_string(), tick: index, reason };
    record.validate().map_err(out)?;
    let limits = joint.plant.joint_limits;
    let slack = 10.0 * noise.encoder_noise_std + 1e-9;
    let q = record.features.joint_pos;
    if q < limits.lo - slack || q > limits.hi + slack {
        return Err(out(format!("joint_pos {q} outside [{}, {}]", limits.lo, limits.hi)));
    }
    let current_band = 10.0 * joint.plant.max_tension / joint.control.muscle.current_gain;
    if record.features.motor_current.abs() > current_band {
        return Err(out(format!("motor_current {} beyond {current_band}", record.features.motor_current)));
    }
    Ok(())
}

fn to_record(tick: &Tick) -> SampleRecord {
    SampleRecord { features: tick.features, torque: tick.label }
}

/// Identifies one protocol cell in errors and seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationCell {
    pub repetition: usize,
    pub load_index: usize,
    pub load: f64,
    pub temperature_index: usize,
    pub temperature: f64,
}

impl CalibrationCell {
    fn describe(&self, joint: &str) -> String {
        format!(
            "joint {joint}, repetition {}, load {:.3} kg, temperature {} C",
            self.repetition, self.load, self.temperature
        )
    }
}

pub fn calibration_cells(protocol: &CalibrationProtocol) -> Vec<CalibrationCell> {
    let loads = protocol.loads();
    let mut cells = Vec::new();
    for repetition in 0..protocol.repetitions {
        for (load_index, &load) in loads.iter().enumerate() {
            for (temperature_index, &temperature) in protocol.temperatures.iter().enumerate() {
                cells.push(CalibrationCell { repetition, load_index, load, temperature_index, temperature });
            }
        }
    }
    cells
}

fn run_cell(
    protocol: &CalibrationProtocol,
    joint: &JointSetup,
    noise: &NoiseModel,
    cell: &CalibrationCell,
) -> Result<Vec<SampleRecord>, DatagenError> {
    let name = cell.describe(&joint.label);
    let wrap = |e: SimError| DatagenError::Simulation { cell: name.clone(), source: e };
    let params = PlantParams { weight_mass: cell.load, ..joint.plant };
    let (lo, hi) = protocol.sweep;
    let state = PlantState::at_rest(&params, &joint.routing, lo, cell.temperature).map_err(|e| wrap(e.into()))?;
    let plant = Plant::new(params, joint.routing, state).map_err(|e| wrap(e.into()))?;
    let seed = mix_seed(protocol.seed, &[cell.repetition as u64, cell.load_index as u64, cell.temperature_index as u64]);
    let mut lp = ClosedLoop::new(plant, joint.control, None, *noise, OuterLoop::Position, seed).map_err(wrap)?;
    lp.run(&Trajectory::hold(lo), protocol.settle_time).map_err(wrap)?;

    let every = decimation(joint.control.control_dt, protocol.sample_rate)?;
    let n = protocol.samples_per_cell();
    let sweep = Trajectory::cosine_sweep(lo, hi, protocol.lift_speed, protocol.duration_per_load, joint.control.control_dt)
        .map_err(wrap)?
        .points()
        .iter()
        .map(|&(t, q)| (t + lp.time(), q))
        .collect();
    let sweep = Trajectory::new(sweep).map_err(wrap)?;
    let ticks = lp.run(&sweep, n as f64 * every as f64 * joint.control.control_dt).map_err(wrap)?;
    let mut out = Vec::with_capacity(n);
    for (i, tick) in ticks.iter().step_by(every).take(n).enumerate() {
        let rec = to_record(tick);
        check_tick(joint, noise, &name, i, &rec)?;
        out.push(rec);
    }
    Ok(out)
}

/// Run every (repetition, load, temperature) cell; cells may run in
/// parallel but rows come back in canonical cell order, then tick order.
pub fn run_calibration(
    protocol: &CalibrationProtocol,
    joint: &JointSetup,
    noise: &NoiseModel,
) -> Result<Vec<SampleRecord>, DatagenError> {
    protocol.validate()?;
    joint.validate()?;
    noise.validate().map_err(DatagenError::InvalidProtocol)?;
    let cells = calibration_cells(protocol);
    let chunks: Vec<Vec<SampleRecord>> =
        cells.par_iter().map(|c| run_cell(protocol, joint, noise, c)).collect::<Result<_, _>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn default_trials() -> usize {
    30
}
fn default_trial_duration() -> f64 {
    5.0
}

/// Randomized closing motions onto each object under position control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraspProtocol {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// s
    #[serde(default = "default_trial_duration")]
    pub trial_duration: f64,
    pub sample_rate: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GraspProtocol {
    fn default() -> Self {
        Self { trials: default_trials(), trial_duration: default_trial_duration(), sample_rate: 100.0, temperature: 30.0, seed: 0 }
    }
}

/// Seeded reference for one grasp trial: rest, close past the contact angle,
/// hold, then open again.
pub fn grasp_trajectory(object: &ContactObject, duration: f64, rng: &mut impl Rng) -> Result<Trajectory, SimError> {
    let start = rng.random_range(0.05..0.2);
    let t_go = rng.random_range(0.1..0.5);
    let close_time = rng.random_range(0.6..1.5);
    let depth = rng.random_range(0.15..0.5);
    let hold = rng.random_range(0.3..0.6);
    let target = object.engage_angle + depth;
    let closed = t_go + close_time;
    let mut points = vec![(0.0, start), (t_go, start), (closed, target)];
    if duration > closed {
        let t_open = closed + hold * (duration - closed);
        points.extend([(t_open, target), (t_open + close_time, start)]);
    }
    Trajectory::new(points)
}

pub fn run_grasp_collection(
    protocol: &GraspProtocol,
    objects: &[ContactObject],
    joint: &JointSetup,
    noise: &NoiseModel,
) -> Result<Vec<SampleRecord>, DatagenError> {
    if protocol.trials == 0 {
        return Err(DatagenError::InvalidProtocol("trials must be at least 1".into()));
    }
    if !(protocol.trial_duration > 0.0 && protocol.sample_rate > 0.0) {
        return Err(DatagenError::InvalidProtocol("trial_duration and sample_rate must be positive".into()));
    }
    joint.validate()?;
    noise.validate().map_err(DatagenError::InvalidProtocol)?;
    let every = decimation(joint.control.control_dt, protocol.sample_rate)?;
    let n = (protocol.trial_duration * protocol.sample_rate).round() as usize;
    let jobs: Vec<(usize, usize)> = (0..objects.len()).flat_map(|o| (0..protocol.trials).map(move |t| (o, t))).collect();
    let chunks: Vec<Vec<SampleRecord>> = jobs
        .par_iter()
        .map(|&(o, trial)| {
            let object = &objects[o];
            let name = format!("joint {}, object {}, trial {trial}", joint.label, object.label);
            let wrap = |e: SimError| DatagenError::Simulation { cell: name.clone(), source: e };
            object.validate().map_err(|e| wrap(e.into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(protocol.seed, &[o as u64, trial as u64]));
            let reference = grasp_trajectory(object, protocol.trial_duration, &mut rng).map_err(wrap)?;
            let params = PlantParams { weight_mass: 0.0, ..joint.plant };
            let q0 = reference.sample(0.0).0;
            let state =
                PlantState::at_rest(&params, &joint.routing, q0, protocol.temperature).map_err(|e| wrap(e.into()))?;
            let plant = Plant::new(params, joint.routing, state).map_err(|e| wrap(e.into()))?;
            let mut lp =
                ClosedLoop::new(plant, joint.control, Some(*object), *noise, OuterLoop::Position, rng.random())
                    .map_err(wrap)?;
            let ticks = lp.run(&reference, n as f64 * every as f64 * joint.control.control_dt).map_err(wrap)?;
            let mut out = Vec::with_capacity(n);
            for (i, tick) in ticks.iter().step_by(every).take(n).enumerate() {
                let rec = to_record(tick);
                check_tick(joint, noise, &name, i, &rec)?;
                out.push(rec);
            }
            Ok(out)
        })
        .collect::<Result<_, DatagenError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Seeded disjoint split; both halves keep the original row order.
pub fn split_train_test<T: Clone>(rows: &[T], test_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let n_test = ((rows.len() as f64) * test_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, rows.len(), n_test);
    let mut is_test = vec![false; rows.len()];
    for i in picked.iter() {
        is_test[i] = true;
    }
    let mut train = Vec::with_capacity(rows.len() - n_test);
    let mut test = Vec::with_capacity(n_test);
    for (row, &t) in rows.iter().zip(&is_test) {
        if t {
            test.push(row.clone());
        } else {
            train.push(row.clone());
        }
    }
    (train, test)
}

/// Provenance written next to a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub kind: String,
    pub header: String,
    pub joint: JointSetup,
    pub calibration: Option<CalibrationProtocol>,
    pub grasp: Option<GraspProtocol>,
    pub objects: Vec<ContactObject>,
    pub noise: NoiseModel,
    pub calibration_rows: usize,
    pub grasp_rows: usize,
    pub rows: usize,
    /// How the row count decomposes.
    pub row_count: String,
}

impl CorpusManifest {
    pub fn new(
        joint: &JointSetup,
        calibration: Option<&CalibrationProtocol>,
        grasp: Option<(&GraspProtocol, &[ContactObject])>,
        noise: &NoiseModel,
        calibration_rows: usize,
        grasp_rows: usize,
    ) -> Self {
        let mut parts = Vec::new();
        if let Some(p) = calibration {
            parts.push(format!(
                "{} loads x {} temperatures x {} samples x {} repetitions = {}",
                p.loads().len(),
                p.temperatures.len(),
                p.samples_per_cell(),
                p.repetitions,
                calibration_rows
            ));
        }
        if let Some((g, objects)) = grasp {
            parts.push(format!(
                "{} objects x {} trials x {} samples = {}",
                objects.len(),
                g.trials,
                (g.trial_duration * g.sample_rate).round() as usize,
                grasp_rows
            ));
        }
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            kind: "corpus-manifest".into(),
            header: CORPUS_HEADER.into(),
            joint: joint.clone(),
            calibration: calibration.cloned(),
            grasp: grasp.map(|(g, _)| g.clone()),
            objects: grasp.map(|(_, o)| o.to_vec()).unwrap_or_default(),
            noise: *noise,
            calibration_rows,
            grasp_rows,
            rows: calibration_rows + grasp_rows,
            row_count: parts.join("; "),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::PidParams;
    use crate::geometry::JointLimits;
    use crate::muscle::MuscleParams;
    use crate::plant::{gravity_torque, ObjectKind};

    fn joint() -> JointSetup {
        JointSetup {
            label: "T".into(),
            routing: TendonRouting {
                pulley_offset_len: 0.012,
                anchor_offset_len: 0.012,
                anchor_angle: 0.0,
                pulley_angle: 1.0,
                pulley_radius: 0.004,
            },
            plant: PlantParams { joint_limits: JointLimits { lo: -0.2, hi: 1.7 }, ..PlantParams::default() },
            control: LoopConfig {
                control_dt: 0.01,
                substeps: 10,
                pid: PidParams { kp: 1.0, ki: 5.0, kd: 0.05, integral_limit: 1.5 },
                muscle: MuscleParams { kp: 50.0, kd1: 0.5, kd2: 2.0, ks: 100.0, preload_len: 0.02, current_gain: 1.0 },
            },
        }
    }

    fn small_protocol() -> CalibrationProtocol {
        CalibrationProtocol {
            load_min: 0.1,
            load_max: 0.3,
            load_step: 0.1,
            duration_per_load: 2.0,
            temperatures: vec![20.0, 40.0],
            seed: 11,
            ..CalibrationProtocol::default()
        }
    }

    #[test]
    fn default_protocol_row_count() {
        let p = CalibrationProtocol::default();
        assert_eq!(p.loads().len(), 20);
        assert!((p.loads()[19] - 1.0).abs() < 1e-12);
        assert_eq!(p.expected_rows(), 240_000);
    }

    #[test]
    fn rows_match_protocol_and_are_deterministic() {
        let p = small_protocol();
        let a = run_calibration(&p, &joint(), &NoiseModel::default()).unwrap();
        assert_eq!(a.len(), p.expected_rows());
        assert_eq!(a.len(), 3 * 2 * 200);
        let b = run_calibration(&p, &joint(), &NoiseModel::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_static_hold_labels_are_gravity() {
        let p = CalibrationProtocol { sweep: (0.3, 0.3 + 1e-9), lift_speed: 1e-12, ..small_protocol() };
        let rows = run_calibration(&p, &joint(), &NoiseModel::none()).unwrap();
        let loads = p.loads();
        for (i, r) in rows.iter().enumerate() {
            let cell = i / p.samples_per_cell();
            let load = loads[cell / p.temperatures.len()];
            let params = PlantParams { weight_mass: load, ..joint().plant };
            assert_eq!(r.torque, gravity_torque(&params, r.features.joint_pos));
        }
    }

    #[test]
    fn cell_seeds_are_distinct() {
        let mut seeds: Vec<u64> = (0..20).flat_map(|l| (0..4).map(move |t| mix_seed(0, &[0, l, t]))).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 80);
    }

    #[test]
    fn grasp_rows_and_stiffness_ordering() {
        let g = GraspProtocol { trials: 2, trial_duration: 3.0, seed: 5, ..GraspProtocol::default() };
        let wood = ContactObject { label: ObjectKind::Wood, stiffness: 5e4, damping: 5.0, engage_angle: 0.6 };
        let plush = ContactObject { label: ObjectKind::Plush, stiffness: 50.0, damping: 0.1, engage_angle: 0.6 };
        let placeholder = ContactObject { label: ObjectKind::Tissue, stiffness: 0.0, damping: 0.0, engage_angle: 0.6 };
        let rows =
            run_grasp_collection(&g, &[wood, plush, placeholder], &joint(), &NoiseModel::none()).unwrap();
        assert_eq!(rows.len(), 3 * 2 * 300);
        let peak = |k: usize| rows[k * 600..(k + 1) * 600].iter().map(|r| r.torque.abs()).fold(0.0, f64::max);
        assert!(peak(0) > peak(1));
        assert!(rows[1200..].iter().all(|r| r.torque == 0.0));
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let rows: Vec<usize> = (0..1000).collect();
        let (train, test) = split_train_test(&rows, 0.2, 3);
        assert_eq!(test.len(), 200);
        assert_eq!(train.len() + test.len(), 1000);
        assert!(test.iter().all(|t| !train.contains(t)));
        assert_eq!(split_train_test(&rows, 0.2, 3), (train, test));
    }

    #[test]
    fn bad_sample_rate_rejected() {
        let p = CalibrationProtocol { sample_rate: 30.0, ..small_protocol() };
        assert!(matches!(run_calibration(&p, &joint(), &NoiseModel::none()), Err(DatagenError::InvalidProtocol(_))));
    }
}
