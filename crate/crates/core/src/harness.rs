//! Experiments: per-joint torque estimation, admittance-versus-PID grasping
//! and fingertip force estimation.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{AdmittanceParams, ContactStopPolicy, PidParams};
use crate::datagen::{mix_seed, JointSetup};
use crate::geometry::{JointLimits, TendonRouting};
use crate::gpr::{evaluate, fit, FitOptions, GprError, GprModel, Metrics, SampleRecord};
use crate::muscle::MuscleParams;
use crate::plant::{ContactObject, ObjectKind, Plant, PlantParams, PlantState};
use crate::sim::{ClosedLoop, LoopConfig, NoiseModel, OuterLoop, SimError, Tick, TorqueEstimator, Trajectory};

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const TRACE_HEADER: &str = "t,tau_applied,tau_estimated,tau_ground_truth,q,q_d,q_cmd,joint_vel";

/// Test rows kept in a prediction trace; metrics always use the full test set.
pub const PREDICTION_TRACE_ROWS: usize = 2000;

pub const JOINT_LABELS: [&str; 6] = ["IF-PIP", "IF-MPR", "TF-MPP", "TF-MPR", "TF-CMR", "TF-CMP"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("joint {joint}: {source}")]
    Gpr {
        joint: String,
        #[source]
        source: GprError,
    },
    #[error("joint {joint}: no {what} data")]
    EmptyCorpus { joint: String, what: &'static str },
    #[error("{0}")]
    Simulation(#[from] SimError),
    #[error("{flagged} of {total} trials flagged (limit {limit_pct}%)")]
    TooManyFlagged { flagged: usize, total: usize, limit_pct: f64 },
    #[error("invalid experiment settings: {0}")]
    InvalidSettings(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn muscle_preset(kd1: f64, preload_len: f64) -> MuscleParams {
    MuscleParams { kp: 50.0, kd1, kd2: 2.0, ks: 100.0, preload_len, current_gain: 1.0 }
}

fn loop_preset(muscle: MuscleParams) -> LoopConfig {
    LoopConfig {
        control_dt: 0.01,
        substeps: 10,
        pid: PidParams { kp: 1.0, ki: 5.0, kd: 0.05, integral_limit: 1.0 },
        muscle,
    }
}

/// Six simulated joints standing in for the index-finger and thumb joints.
pub fn default_joints() -> Vec<JointSetup> {
    // (pulley offset, anchor offset, anchor angle, pulley angle, pulley radius, weight arm, inertia, kd1, preload)
    let table: [(f64, f64, f64, f64, f64, f64, f64, f64, f64); 6] = [
        (0.012, 0.012, 0.0, 1.0, 0.004, 0.050, 1.0e-3, 0.5, 0.02),
        (0.014, 0.011, 0.1, 1.1, 0.004, 0.055, 1.2e-3, 0.5, 0.02),
        (0.013, 0.012, 0.0, 0.9, 0.0035, 0.050, 1.0e-3, 0.8, 0.015),
        (0.012, 0.013, 0.2, 1.2, 0.004, 0.048, 1.1e-3, 0.8, 0.015),
        (0.015, 0.012, 0.0, 1.0, 0.0045, 0.060, 1.5e-3, 1.0, 0.01),
        (0.013, 0.011, 0.05, 1.05, 0.004, 0.055, 1.3e-3, 1.0, 0.01),
    ];
    JOINT_LABELS
        .iter()
        .zip(table)
        .map(|(label, (lp, la, anchor, pulley, r, arm, inertia, kd1, preload))| JointSetup {
            label: label.to_string(),
            routing: TendonRouting {
                pulley_offset_len: lp,
                anchor_offset_len: la,
                anchor_angle: anchor,
                pulley_angle: pulley,
                pulley_radius: r,
            },
            plant: PlantParams {
                inertia,
                weight_arm: arm,
                max_tension: 300.0,
                joint_limits: JointLimits { lo: -0.2, hi: 1.7 },
                ..PlantParams::default()
            },
            control: loop_preset(muscle_preset(kd1, preload)),
        })
        .collect()
}

/// Six objects from hard to soft, stiffness log-spaced from 2000 down to 20 N/m.
pub fn default_objects() -> Vec<ContactObject> {
    let n = ObjectKind::ALL.len();
    ObjectKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let stiffness = 2e3 * 10f64.powf(-2.0 * i as f64 / (n - 1) as f64);
            ContactObject { label, stiffness, damping: stiffness.sqrt(), engage_angle: 0.6 }
        })
        .collect()
}

// ----------------------------------------------------------------------------
// Estimation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMetrics {
    pub joint: String,
    pub mse: f64,
    pub r2: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub subsampled: bool,
    pub lml: f64,
    pub signal_std: f64,
    pub length_scale: crate::gpr::LengthScale,
    pub noise_std: f64,
}

/// Per-joint train and test corpora.
pub struct JointCorpus<'a> {
    pub joint: &'a str,
    pub train: &'a [SampleRecord],
    pub test: &'a [SampleRecord],
}

/// Model, metrics and a prediction-versus-truth trace on the test set.
pub struct EstimationOutcome {
    pub model: GprModel,
    pub metrics: JointMetrics,
    /// `(truth, predicted mean, predicted std)` on evenly strided test rows.
    pub predictions: Vec<(f64, f64, f64)>,
}

pub fn run_estimation(corpus: &JointCorpus<'_>, options: &FitOptions) -> Result<EstimationOutcome, HarnessError> {
    let joint = corpus.joint.to_string();
    if corpus.train.is_empty() {
        return Err(HarnessError::EmptyCorpus { joint, what: "training" });
    }
    if corpus.test.is_empty() {
        return Err(HarnessError::EmptyCorpus { joint, what: "test" });
    }
    let wrap = |source| HarnessError::Gpr { joint: joint.clone(), source };
    let model = fit(corpus.train, options).map_err(wrap)?.with_label(&joint);
    let Metrics { mse, r2, n } = evaluate(&model, corpus.test).map_err(wrap)?;
    let stride = corpus.test.len().div_ceil(PREDICTION_TRACE_ROWS);
    let predictions = corpus
        .test
        .iter()
        .step_by(stride)
        .map(|s| {
            let p = model.predict(&s.features);
            (s.torque, p.mean, p.std)
        })
        .collect();
    let hp = model.hyperparams().clone();
    let summary = model.summary().expect("fitted model carries a summary");
    let metrics = JointMetrics {
        joint: joint.clone(),
        mse,
        r2,
        n_train: summary.n_train,
        n_test: n,
        subsampled: summary.subsampled,
        lml: summary.lml,
        signal_std: hp.signal_std,
        length_scale: hp.length_scale,
        noise_std: hp.noise_std,
    };
    Ok(EstimationOutcome { model, metrics, predictions })
}

/// Fit and evaluate every joint; joints are independent.
pub fn run_estimation_experiment(
    corpora: &[JointCorpus<'_>],
    options: &FitOptions,
) -> Result<Vec<EstimationOutcome>, HarnessError> {
    corpora.iter().map(|c| run_estimation(c, options)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub format_version: u32,
    pub kind: String,
    pub joints: Vec<JointMetrics>,
}

impl EstimationReport {
    pub fn new(joints: Vec<JointMetrics>) -> Self {
        Self { format_version: REPORT_FORMAT_VERSION, kind: "estimation-report".into(), joints }
    }
}

// ----------------------------------------------------------------------------
// Grasp comparison

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Pid,
    Admittance,
}

fn default_trials() -> usize {
    30
}
fn default_duration() -> f64 {
    5.0
}
fn default_exclusion() -> f64 {
    0.2
}
fn default_contact_threshold() -> f64 {
    0.005
}
fn default_flag_limit() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSettings {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// s
    #[serde(default = "default_duration")]
    pub trial_duration: f64,
    /// Initial transient left out of every metric (s).
    #[serde(default = "default_exclusion")]
    pub settle_exclusion: f64,
    /// Ground-truth contact torque marking the start of the contact phase (Nm).
    #[serde(default = "default_contact_threshold")]
    pub contact_threshold: f64,
    pub temperature: f64,
    pub seed: u64,
    pub admittance: AdmittanceParams,
    pub contact_stop: ContactStopPolicy,
    /// Largest tolerated share of flagged trials (%).
    #[serde(default = "default_flag_limit")]
    pub max_flagged_pct: f64,
}

impl Default for ComparisonSettings {
    fn default() -> Self {
        Self {
            trials: default_trials(),
            trial_duration: default_duration(),
            settle_exclusion: default_exclusion(),
            contact_threshold: default_contact_threshold(),
            temperature: 30.0,
            seed: 0,
            admittance: AdmittanceParams { inertia: 0.01, damping: 0.2, stiffness: 0.5, torque_offset: 0.0 },
            contact_stop: ContactStopPolicy::default(),
            max_flagged_pct: default_flag_limit(),
        }
    }
}

impl ComparisonSettings {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSettings(m.into()));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.trial_duration > self.settle_exclusion && self.settle_exclusion >= 0.0) {
            return bad("trial_duration must exceed settle_exclusion >= 0");
        }
        if !(self.contact_threshold > 0.0) {
            return bad("contact_threshold must be positive");
        }
        if !(0.0..=100.0).contains(&self.max_flagged_pct) {
            return bad("max_flagged_pct must be within [0, 100]");
        }
        self.admittance.validate().map_err(|e| HarnessError::InvalidSettings(e.to_string()))?;
        self.contact_stop.validate().map_err(|e| HarnessError::InvalidSettings(e.to_string()))?;
        Ok(())
    }
}

/// One row of a per-trial trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub tau_applied: f64,
    pub tau_estimated: f64,
    pub tau_ground_truth: f64,
    pub q: f64,
    /// Reference from the trajectory.
    pub q_d: f64,
    pub q_cmd: f64,
    pub joint_vel: f64,
}

impl From<&Tick> for TraceRow {
    fn from(t: &Tick) -> Self {
        Self {
            t: t.t,
            tau_applied: t.tau_applied,
            tau_estimated: t.tau_estimated,
            tau_ground_truth: t.tau_truth,
            q: t.q,
            q_d: t.q_ref,
            q_cmd: t.q_cmd,
            joint_vel: t.joint_vel,
        }
    }
}

pub fn write_trace<W: Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.t, r.tau_applied, r.tau_estimated, r.tau_ground_truth, r.q, r.q_d, r.q_cmd, r.joint_vel
        )?;
    }
    w.flush()
}

pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRow>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(r);
    let header = reader.headers().map_err(|e| HarnessError::Trace(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
    if header != TRACE_HEADER {
        return Err(HarnessError::Trace(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| HarnessError::Trace(e.to_string()))?;
        let v: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| HarnessError::Trace(format!("line {}: {e}", i + 2)))?;
        if v.len() != 8 {
            return Err(HarnessError::Trace(format!("line {}: expected 8 fields", i + 2)));
        }
        rows.push(TraceRow {
            t: v[0],
            tau_applied: v[1],
            tau_estimated: v[2],
            tau_ground_truth: v[3],
            q: v[4],
            q_d: v[5],
            q_cmd: v[6],
            joint_vel: v[7],
        });
    }
    Ok(rows)
}

/// Energy measures over the contact phase of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEnergy {
    /// Time of the first ground-truth contact crossing after the exclusion window.
    pub contact_start: f64,
    /// Integral of |tau_applied| (N m s).
    pub abs_torque: f64,
    /// Integral of tau_applied^2 (N^2 m^2 s).
    pub squared_torque: f64,
    /// Integral of |tau_applied * joint velocity| (J).
    pub mechanical_work: f64,
}

/// Rectangle-rule energies from a trace; `None` when contact never occurs.
pub fn trial_energy(rows: &[TraceRow], settle_exclusion: f64, contact_threshold: f64) -> Option<TrialEnergy> {
    let dt = match rows {
        [a, b, ..] => b.t - a.t,
        _ => return None,
    };
    let start = rows.iter().position(|r| r.t >= settle_exclusion - 1e-12 && r.tau_ground_truth > contact_threshold)?;
    let phase = &rows[start..];
    Some(TrialEnergy {
        contact_start: rows[start].t,
        abs_torque: phase.iter().map(|r| r.tau_applied.abs()).sum::<f64>() * dt,
        squared_torque: phase.iter().map(|r| r.tau_applied * r.tau_applied).sum::<f64>() * dt,
        mechanical_work: phase.iter().map(|r| (r.tau_applied * r.joint_vel).abs()).sum::<f64>() * dt,
    })
}

/// Seeded closing motion shared by both controllers of a trial: rest, close
/// to a random depth past the contact angle, hold.
pub fn comparison_trajectory(object: &ContactObject, rng: &mut impl Rng) -> Result<Trajectory, SimError> {
    let start = rng.random_range(0.1..0.2);
    let t_go = rng.random_range(0.2..0.5);
    let close_time = rng.random_range(0.8..1.5);
    let depth = rng.random_range(0.3..0.5);
    Trajectory::new(vec![(0.0, start), (t_go, start), (t_go + close_time, object.engage_angle + depth)])
}

/// Result of one controller on one trial.
#[derive(Debug, Clone)]
pub struct ControllerRun {
    pub trace: Vec<TraceRow>,
    pub energy: Option<TrialEnergy>,
}

#[allow(clippy::too_many_arguments)]
fn run_controller(
    kind: ControllerKind,
    joint: &JointSetup,
    object: &ContactObject,
    settings: &ComparisonSettings,
    noise: &NoiseModel,
    estimator: &dyn TorqueEstimator,
    reference: &Trajectory,
    plant_seed: u64,
) -> Result<ControllerRun, SimError> {
    let params = PlantParams { weight_mass: 0.0, ..joint.plant };
    let state = PlantState::at_rest(&params, &joint.routing, reference.sample(0.0).0, settings.temperature)?;
    let plant = Plant::new(params, joint.routing, state)?;
    let outer = match kind {
        ControllerKind::Pid => OuterLoop::Position,
        ControllerKind::Admittance => {
            OuterLoop::Admittance { params: settings.admittance, stop: settings.contact_stop, estimator }
        }
    };
    let mut lp = ClosedLoop::new(plant, joint.control, Some(*object), *noise, outer, plant_seed)?;
    let ticks = lp.run(reference, settings.trial_duration)?;
    let mut trace: Vec<TraceRow> = ticks.iter().map(TraceRow::from).collect();
    if matches!(kind, ControllerKind::Pid) {
        // log the estimate alongside the baseline as well
        for (row, tick) in trace.iter_mut().zip(&ticks) {
            row.tau_estimated = estimator.estimate(&tick.features);
        }
    }
    let energy = trial_energy(&trace, settings.settle_exclusion, settings.contact_threshold);
    Ok(ControllerRun { trace, energy })
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub object: ObjectKind,
    pub trial: usize,
    pub baseline: Option<ControllerRun>,
    pub candidate: Option<ControllerRun>,
    /// Why the trial was excluded, if it was.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub object: ObjectKind,
    pub stiffness: f64,
    pub trials: usize,
    pub flagged: usize,
    /// Mean integral of |tau| over the contact phase (N m s).
    pub energy_baseline: f64,
    pub energy_candidate: f64,
    pub reduction_pct: f64,
    pub squared_baseline: f64,
    pub squared_candidate: f64,
    pub squared_reduction_pct: f64,
    pub work_baseline: f64,
    pub work_candidate: f64,
    pub work_reduction_pct: f64,
    /// Per-trial |tau| energies of the kept trials, baseline then candidate.
    pub trial_energies: Vec<(f64, f64)>,
}

pub fn reduction_pct(baseline: f64, candidate: f64) -> f64 {
    100.0 * (1.0 - candidate / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub kind: String,
    pub joint: String,
    pub baseline: ControllerKind,
    pub candidate: ControllerKind,
    pub settings: ComparisonSettings,
    pub noise: NoiseModel,
    /// Hard to soft.
    pub objects: Vec<ObjectResult>,
    pub mean_reduction_pct: f64,
    pub total_trials: usize,
    pub flagged_trials: usize,
    pub energy_metric: String,
}

impl ComparisonReport {
    /// Reductions strictly decreasing from the hardest to the softest object.
    pub fn is_monotone(&self) -> bool {
        self.objects.windows(2).all(|w| w[0].reduction_pct > w[1].reduction_pct)
    }
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Stiffest first.
fn hard_to_soft(objects: &[ContactObject]) -> Vec<ContactObject> {
    let mut sorted = objects.to_vec();
    sorted.sort_by(|a, b| b.stiffness.total_cmp(&a.stiffness).then(a.label.cmp(&b.label)));
    sorted
}

/// Run every (object, trial) pair under both controllers with identical
/// references and plant seeds; returns the raw outcomes in hard-to-soft,
/// trial order.
pub fn run_grasp_trials(
    joint: &JointSetup,
    objects: &[ContactObject],
    settings: &ComparisonSettings,
    noise: &NoiseModel,
    estimator: &dyn TorqueEstimator,
    baseline: ControllerKind,
    candidate: ControllerKind,
) -> Result<Vec<TrialOutcome>, HarnessError> {
    settings.validate()?;
    let objects = hard_to_soft(objects);
    for o in &objects {
        o.validate().map_err(|e| HarnessError::InvalidSettings(e.to_string()))?;
    }
    let jobs: Vec<(usize, usize)> = (0..objects.len()).flat_map(|o| (0..settings.trials).map(move |t| (o, t))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(oi, trial)| {
            let object = &objects[oi];
            // trial k uses the same draws on every object so that object-to-object
            // differences are not buried in trial noise
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(settings.seed, &[trial as u64]));
            let reference = comparison_trajectory(object, &mut rng)?;
            let plant_seed: u64 = rng.random();
            let run = |kind| run_controller(kind, joint, object, settings, noise, estimator, &reference, plant_seed);
            let (b, c) = (run(baseline), run(candidate));
            let flag = match (&b, &c) {
                (Err(e), _) | (_, Err(e)) => Some(format!("diverged: {e}")),
                (Ok(b), Ok(c)) if b.energy.is_none() || c.energy.is_none() => Some("no contact".to_string()),
                _ => None,
            };
            Ok(TrialOutcome { object: object.label, trial, baseline: b.ok(), candidate: c.ok(), flag })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(outcomes)
}

/// Aggregate trial outcomes into the report.
#[allow(clippy::too_many_arguments)]
pub fn summarize_comparison(
    joint: &str,
    objects: &[ContactObject],
    outcomes: &[TrialOutcome],
    settings: &ComparisonSettings,
    noise: &NoiseModel,
    baseline: ControllerKind,
    candidate: ControllerKind,
) -> Result<ComparisonReport, HarnessError> {
    let total = outcomes.len();
    let flagged = outcomes.iter().filter(|o| o.flag.is_some()).count();
    if flagged as f64 > settings.max_flagged_pct / 100.0 * total as f64 {
        return Err(HarnessError::TooManyFlagged { flagged, total, limit_pct: settings.max_flagged_pct });
    }
    let mut results = Vec::new();
    for object in hard_to_soft(objects) {
        let mine: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.object == object.label).collect();
        let kept: Vec<(TrialEnergy, TrialEnergy)> = mine
            .iter()
            .filter(|o| o.flag.is_none())
            .map(|o| {
                let e = |r: &Option<ControllerRun>| r.as_ref().and_then(|r| r.energy).expect("unflagged trial has energy");
                (e(&o.baseline), e(&o.candidate))
            })
            .collect();
        if kept.is_empty() {
            return Err(HarnessError::TooManyFlagged { flagged, total, limit_pct: settings.max_flagged_pct });
        }
        let eb = mean(kept.iter().map(|k| k.0.abs_torque));
        let ec = mean(kept.iter().map(|k| k.1.abs_torque));
        let sb = mean(kept.iter().map(|k| k.0.squared_torque));
        let sc = mean(kept.iter().map(|k| k.1.squared_torque));
        let wb = mean(kept.iter().map(|k| k.0.mechanical_work));
        let wc = mean(kept.iter().map(|k| k.1.mechanical_work));
        results.push(ObjectResult {
            object: object.label,
            stiffness: object.stiffness,
            trials: mine.len(),
            flagged: mine.len() - kept.len(),
            energy_baseline: eb,
            energy_candidate: ec,
            reduction_pct: reduction_pct(eb, ec),
            squared_baseline: sb,
            squared_candidate: sc,
            squared_reduction_pct: reduction_pct(sb, sc),
            work_baseline: wb,
            work_candidate: wc,
            work_reduction_pct: reduction_pct(wb, wc),
            trial_energies: kept.iter().map(|k| (k.0.abs_torque, k.1.abs_torque)).collect(),
        });
    }
    let mean_reduction_pct = mean(results.iter().map(|r| r.reduction_pct));
    Ok(ComparisonReport {
        format_version: REPORT_FORMAT_VERSION,
        kind: "comparison-report".into(),
        joint: joint.to_string(),
        baseline,
        candidate,
        settings: settings.clone(),
        noise: *noise,
        objects: results,
        mean_reduction_pct,
        total_trials: total,
        flagged_trials: flagged,
        energy_metric: format!(
            "integral of |tau_applied| dt from the first ground-truth contact torque above {} Nm \
             (after the first {} s) to trial end; mean over kept trials",
            settings.contact_threshold, settings.settle_exclusion
        ),
    })
}

/// Trials plus summary in one call.
pub fn run_grasp_comparison(
    joint: &JointSetup,
    objects: &[ContactObject],
    settings: &ComparisonSettings,
    noise: &NoiseModel,
    estimator: &dyn TorqueEstimator,
    baseline: ControllerKind,
    candidate: ControllerKind,
) -> Result<(ComparisonReport, Vec<TrialOutcome>), HarnessError> {
    let outcomes = run_grasp_trials(joint, objects, settings, noise, estimator, baseline, candidate)?;
    let report = summarize_comparison(&joint.label, objects, &outcomes, settings, noise, baseline, candidate)?;
    Ok((report, outcomes))
}

/// Human-readable table of a comparison report.
pub fn format_comparison(report: &ComparisonReport) -> String {
    let mut out = format!(
        "{:<8} {:>10} {:>12} {:>12} {:>10} {:>8}\n",
        "object", "k [N/m]", "E_base", "E_cand", "red. [%]", "flagged"
    );
    for o in &report.objects {
        out.push_str(&format!(
            "{:<8} {:>10.1} {:>12.5} {:>12.5} {:>10.2} {:>8}\n",
            o.object.name(),
            o.stiffness,
            o.energy_baseline,
            o.energy_candidate,
            o.reduction_pct,
            o.flagged
        ));
    }
    out.push_str(&format!("mean reduction {:.2} %\n", report.mean_reduction_pct));
    out
}

// ----------------------------------------------------------------------------
// Fingertip force

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceReport {
    pub format_version: u32,
    pub kind: String,
    pub joint: String,
    pub samples: usize,
    /// Samples dropped because the lever was degenerate.
    pub excluded: usize,
    pub mean_abs_error: f64,
    pub peak_abs_error: f64,
    pub mse: f64,
}

/// Fingertip force from joint torque, `None` for a degenerate lever.
pub fn fingertip_force(torque: f64, lever: f64) -> Option<f64> {
    (lever.abs() > 1e-9).then(|| torque / lever)
}

/// Close the finger on each object under position control and compare the
/// estimated fingertip force with the simulated one over the contact phase.
pub fn run_fingertip_force_experiment(
    joint: &JointSetup,
    objects: &[ContactObject],
    settings: &ComparisonSettings,
    noise: &NoiseModel,
    estimator: &dyn TorqueEstimator,
) -> Result<ForceReport, HarnessError> {
    let outcomes =
        run_grasp_trials(joint, objects, settings, noise, estimator, ControllerKind::Pid, ControllerKind::Pid)?;
    let lever = joint.plant.fingertip_lever;
    let mut errors = Vec::new();
    let mut excluded = 0;
    for o in outcomes.iter().filter(|o| o.flag.is_none()) {
        let run = o.baseline.as_ref().expect("unflagged trial has a run");
        let start = run.energy.expect("unflagged trial has contact").contact_start;
        for row in run.trace.iter().filter(|r| r.t >= start) {
            match (fingertip_force(row.tau_estimated, lever), fingertip_force(row.tau_ground_truth, lever)) {
                (Some(est), Some(truth)) => errors.push(est - truth),
                _ => excluded += 1,
            }
        }
    }
    let n = errors.len();
    let (mean_abs_error, peak_abs_error, mse) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            mean(errors.iter().map(|e| e.abs())),
            errors.iter().fold(0.0f64, |m, e| m.max(e.abs())),
            mean(errors.iter().map(|e| e * e)),
        )
    };
    Ok(ForceReport {
        format_version: REPORT_FORMAT_VERSION,
        kind: "force-report".into(),
        joint: joint.label.clone(),
        samples: n,
        excluded,
        mean_abs_error,
        peak_abs_error,
        mse,
    })
}
