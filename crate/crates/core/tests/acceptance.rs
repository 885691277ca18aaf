//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tendon_finger::control::{admittance_step, AdmittanceParams, LoopState, MAX_CONTROL_DT};
use tendon_finger::datagen::{
    run_calibration, run_grasp_collection, split_train_test, CalibrationProtocol, GraspProtocol,
};
use tendon_finger::geometry::{moment_arm, JointAngle, JointLimits, TendonRouting};
use tendon_finger::gpr::{
    fit, log_marginal_likelihood, optimize_hyperparams, write_corpus, FeatureVector, FitOptions, GprModel, Inputs,
    KernelHyperparams, SampleRecord, SearchSettings,
};
use tendon_finger::harness::{
    default_joints, default_objects, run_estimation, run_grasp_comparison, write_trace, ComparisonSettings,
    ControllerKind, JointCorpus,
};
use tendon_finger::muscle::{tendon_force, MuscleParams, MuscleState};
use tendon_finger::plant::{mechanical_energy, plant_step, Actuation, PlantParams, PlantState};
use tendon_finger::sim::NoiseModel;

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration) {
    // straight to the stderr handle so the line shows even when output is captured
    let _ = writeln!(
        std::io::stderr().lock(),
        "criterion {id} [{}] {name}: {detail} ({:.2} s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
}

// ---------------------------------------------------------------------------
// dense oracle

/// Inverse and log-determinant by Gauss-Jordan elimination with partial pivoting.
fn gauss_jordan(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let mut log_det: f64 = 0.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        log_det += p.abs().ln();
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    (m.into_iter().map(|r| r[n..].to_vec()).collect(), log_det)
}

fn sq_exp(x: &[f64], y: &[f64], signal: f64, length: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    signal * signal * (-0.5 * d2 / (length * length)).exp()
}

fn pop_mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
    (m, if s > 1e-12 { s } else { 1.0 })
}

struct Dataset {
    samples: Vec<SampleRecord>,
    queries: Vec<FeatureVector>,
    signal: f64,
    length: f64,
    noise: f64,
}

fn random_dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let n = rng.random_range(3..=50);
    let point = |rng: &mut ChaCha8Rng| {
        FeatureVector::from_array([
            rng.random_range(-5.0..5.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.2..1.7),
            rng.random_range(-2.0..2.0),
            rng.random_range(20.0..50.0),
        ])
    };
    let samples = (0..n)
        .map(|_| {
            let features = point(rng);
            let a = features.to_array();
            let torque = 0.05 * a[0] * a[3].cos() - 0.02 * a[4] + rng.random_range(-0.01..0.01);
            SampleRecord { features, torque }
        })
        .collect();
    Dataset {
        samples,
        queries: (0..5).map(|_| point(rng)).collect(),
        signal: rng.random_range(0.5..2.0),
        length: rng.random_range(0.5..3.0),
        noise: rng.random_range(0.05..0.5),
    }
}

/// Standardized inputs, targets and their target scale, computed independently.
fn oracle_standardize(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>, [(f64, f64); 6], (f64, f64)) {
    let raw: Vec<[f64; 6]> = ds.samples.iter().map(|s| s.features.to_array()).collect();
    let mut stats = [(0.0, 1.0); 6];
    for (c, st) in stats.iter_mut().enumerate() {
        *st = pop_mean_std(&raw.iter().map(|r| r[c]).collect::<Vec<_>>());
    }
    let y: Vec<f64> = ds.samples.iter().map(|s| s.torque).collect();
    let ys = pop_mean_std(&y);
    let x = raw.iter().map(|r| (0..6).map(|c| (r[c] - stats[c].0) / stats[c].1).collect()).collect();
    (x, y.iter().map(|v| (v - ys.0) / ys.1).collect(), stats, ys)
}

fn oracle_gram(x: &[Vec<f64>], ds: &Dataset) -> Vec<Vec<f64>> {
    let n = x.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| sq_exp(&x[i], &x[j], ds.signal, ds.length) + if i == j { ds.noise * ds.noise } else { 0.0 })
                .collect()
        })
        .collect()
}

fn oracle_lml(x: &[Vec<f64>], y: &[f64], ds: &Dataset) -> f64 {
    let (inv, log_det) = gauss_jordan(&oracle_gram(x, ds));
    let quad: f64 = (0..y.len()).map(|i| y[i] * (0..y.len()).map(|j| inv[i][j] * y[j]).sum::<f64>()).sum();
    -0.5 * quad - 0.5 * log_det - 0.5 * y.len() as f64 * (2.0 * PI).ln()
}

#[test]
fn criterion_1_gpr_matches_dense_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ds = random_dataset(&mut rng);
        let hp = KernelHyperparams::isotropic(ds.signal, ds.length, ds.noise);
        let model = GprModel::with_hyperparams(&ds.samples, hp).unwrap();
        let (x, y, stats, ys) = oracle_standardize(&ds);
        let (inv, _) = gauss_jordan(&oracle_gram(&x, &ds));
        for q in &ds.queries {
            let a = q.to_array();
            let z: Vec<f64> = (0..6).map(|c| (a[c] - stats[c].0) / stats[c].1).collect();
            let k: Vec<f64> = x.iter().map(|xi| sq_exp(xi, &z, ds.signal, ds.length)).collect();
            let n = k.len();
            let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| inv[i][j] * k[j]).sum()).collect();
            let mean = ys.0 + ys.1 * (0..n).map(|i| w[i] * y[i]).sum::<f64>();
            let var = ds.signal * ds.signal - (0..n).map(|i| w[i] * k[i]).sum::<f64>();
            let std = ys.1 * var.max(0.0).sqrt();
            let p = model.predict(q);
            worst = worst.max((p.mean - mean).abs()).max((p.std - std).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-8 && elapsed < Duration::from_secs(10);
    report(1, "GPR posterior vs dense oracle", pass, format!("max |diff| {worst:.3e} over 100 datasets"), elapsed);
    assert!(pass);
}

#[test]
fn criterion_2_log_marginal_likelihood() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut optimizer_ok = true;
    for i in 0..100 {
        let ds = random_dataset(&mut rng);
        let hp = KernelHyperparams::isotropic(ds.signal, ds.length, ds.noise);
        let (x, y, _, _) = oracle_standardize(&ds);
        let inputs = Inputs::from_rows(&x).unwrap();
        let ours = log_marginal_likelihood(&inputs, &y, &hp).unwrap();
        let model = GprModel::with_hyperparams(&ds.samples, hp).unwrap();
        let expected = oracle_lml(&x, &y, &ds);
        worst = worst.max((ours - expected).abs()).max((model.log_marginal_likelihood() - expected).abs());
        if i % 10 == 0 {
            let settings = SearchSettings { restarts: 4, max_iterations: 200, tolerance: 1e-8, per_feature: false };
            let out = optimize_hyperparams(&inputs, &y, &settings).unwrap();
            let best = out.best().best_lml;
            for r in &out.restarts {
                optimizer_ok &= r.best_lml >= r.initial_lml && best >= r.initial_lml;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-8 && optimizer_ok;
    report(
        2,
        "log marginal likelihood vs dense oracle",
        pass,
        format!("max |diff| {worst:.3e}; optimizer never below its starting points: {optimizer_ok}"),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_3_torque_estimation_quality() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for joint in default_joints() {
        let rows = run_calibration(&CalibrationProtocol::default(), &joint, &NoiseModel::default()).unwrap();
        let (train, test) = split_train_test(&rows, 0.2, 1);
        let out = run_estimation(&JointCorpus { joint: &joint.label, train: &train, test: &test }, &FitOptions::default())
            .unwrap();
        let m = &out.metrics;
        let ok = m.r2 >= 0.95 && (1e-4..=1e-3).contains(&m.mse) && m.n_train == 2000;
        pass &= ok;
        lines.push(format!("{} mse {:.3e} r2 {:.4}", m.joint, m.mse, m.r2));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    report(3, "per-joint torque estimation", pass, lines.join("; "), elapsed);
    assert!(pass);
}

// ---------------------------------------------------------------------------
// geometry oracle

/// Tangent from the anchor `C` to the pulley circle (centre `B`, radius `r`),
/// touching on the opposite side of line `CB` from the joint axis `A`; returns
/// the distance from `A` to that tangent line.
fn tangent_oracle(lp: f64, la: f64, r: f64, included: f64) -> Option<f64> {
    let (ax, ay) = (0.0, 0.0);
    let (bx, by) = (lp, 0.0);
    let (cx, cy) = (la * included.cos(), la * included.sin());
    let d = ((bx - cx).powi(2) + (by - cy).powi(2)).sqrt();
    if d <= r {
        return None;
    }
    // tangent points seen from B: angle of BC rotated by +-acos(r/d)
    let base = (cy - by).atan2(cx - bx);
    let spread = (r / d).acos();
    let cross = |ux: f64, uy: f64, vx: f64, vy: f64| ux * vy - uy * vx;
    let side_a = cross(bx - cx, by - cy, ax - cx, ay - cy);
    for s in [1.0, -1.0] {
        let (tx, ty) = (bx + r * (base + s * spread).cos(), by + r * (base + s * spread).sin());
        let side_t = cross(bx - cx, by - cy, tx - cx, ty - cy);
        if side_t * side_a < 0.0 {
            let (ux, uy) = (tx - cx, ty - cy);
            return Some(cross(ux, uy, ax - cx, ay - cy).abs() / (ux * ux + uy * uy).sqrt());
        }
    }
    None
}

#[test]
fn criterion_4_geometry_matches_tangent_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 10_000 {
        let lp: f64 = rng.random_range(0.005..0.03);
        let la = rng.random_range(0.005..0.03);
        let r = rng.random_range(0.0005..0.9 * lp.min(la));
        let routing = TendonRouting {
            pulley_offset_len: lp,
            anchor_offset_len: la,
            anchor_angle: rng.random_range(-0.5..0.5),
            pulley_angle: rng.random_range(0.3..1.5),
            pulley_radius: r,
        };
        let q = JointAngle(rng.random_range(-0.2..1.7));
        let Some(expected) = tangent_oracle(lp, la, r, routing.included_angle(q)) else { continue };
        let got = moment_arm(&routing, q).unwrap().moment_arm;
        worst = worst.max((got - expected).abs());
        checked += 1;
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-9 && elapsed < Duration::from_secs(5);
    report(4, "moment arm vs tangent-line oracle", pass, format!("max |diff| {worst:.3e} m over {checked} cases"), elapsed);
    assert!(pass);
}

#[test]
fn criterion_5_admittance_steady_state() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = AdmittanceParams {
            inertia: rng.random_range(0.005..1.0),
            damping: rng.random_range(0.05..5.0),
            stiffness: rng.random_range(0.1..20.0),
            torque_offset: 0.0,
        };
        let tau = rng.random_range(-1.0..1.0);
        let q_d = rng.random_range(0.0..1.0);
        let dt: f64 = (0.5 * p.stability_bound()).min(0.01).min(MAX_CONTROL_DT);
        let mut s = LoopState::at(q_d);
        let mut settled = false;
        for _ in 0..2_000_000 {
            s = admittance_step(&p, &s, q_d, tau, dt).unwrap();
            if s.dq_dot.abs() < 1e-12 && (s.dq - tau / p.stiffness).abs() < 1e-9 {
                settled = true;
                break;
            }
        }
        let err = if settled { (s.dq - tau / p.stiffness).abs() } else { f64::INFINITY };
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-6 && elapsed < Duration::from_secs(10);
    report(5, "admittance steady-state deviation", pass, format!("max |dq - tau/K| {worst:.3e} rad"), elapsed);
    assert!(pass);
}

#[test]
fn criterion_6_controller_comparison() {
    let start = Instant::now();
    let joint = &default_joints()[0];
    let objects = default_objects();
    let noise = NoiseModel::default();
    let mut rows = run_calibration(&CalibrationProtocol::default(), joint, &noise).unwrap();
    rows.extend(run_grasp_collection(&GraspProtocol::default(), &objects, joint, &noise).unwrap());
    let model = fit(&rows, &FitOptions::default()).unwrap();
    let settings = ComparisonSettings::default();
    let (rep, _) =
        run_grasp_comparison(joint, &objects, &settings, &noise, &model, ControllerKind::Pid, ControllerKind::Admittance)
            .unwrap();
    let elapsed = start.elapsed();
    let per_object = rep.objects.iter().all(|o| o.energy_candidate <= o.energy_baseline && o.trials == 30);
    let pass = per_object && rep.is_monotone() && rep.mean_reduction_pct >= 15.0 && elapsed < Duration::from_secs(600);
    let detail = rep
        .objects
        .iter()
        .map(|o| format!("{} {:.1}%", o.object.name(), o.reduction_pct))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        6,
        "admittance vs PID energy",
        pass,
        format!("{detail}; mean {:.2}%; flagged {}/{}", rep.mean_reduction_pct, rep.flagged_trials, rep.total_trials),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_7_muscle_law() {
    let start = Instant::now();
    let params = MuscleParams { kp: 50.0, kd1: 1.0, kd2: 2.0, ks: 100.0, preload_len: 0.02, current_gain: 1.0 };
    let derived = MuscleState {
        cable_len: 0.10,
        cable_len_desired: 0.11,
        cable_vel: 0.0,
        cable_vel_desired: 0.1,
        spring_len: 0.025,
        current: 1.0,
    };
    let expected = 1.0 + 0.5f64.exp() + 3.0 * 0.1 + 100.0 * 0.005;
    let f = tendon_force(&params, &derived).unwrap();
    let worst = (f - expected).abs();
    let rounds = format!("{f:.4}") == "3.4487";
    let mut exact_zero = true;
    for current in [0.0, 0.5, 2.0, 17.25] {
        let s = MuscleState {
            cable_len: 0.1,
            cable_len_desired: 0.1,
            cable_vel: 0.3,
            cable_vel_desired: 0.3,
            spring_len: 0.02,
            current,
        };
        exact_zero &= tendon_force(&params, &s).unwrap() == 1.0 + current;
    }
    let elapsed = start.elapsed();
    let pass = worst < 1e-9 && rounds && exact_zero;
    report(7, "muscle force law", pass, format!("F = {f:.6} N (|err| {worst:.1e}); zero-error F = 1 + I: {exact_zero}"), elapsed);
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let joint = &default_joints()[1];
    let objects = default_objects();
    let noise = NoiseModel::default();
    let protocol = CalibrationProtocol { load_max: 0.3, duration_per_load: 3.0, seed: 11, ..CalibrationProtocol::default() };
    let grasp = GraspProtocol { trials: 2, trial_duration: 2.0, seed: 12, ..GraspProtocol::default() };
    let corpus = || {
        let mut rows = run_calibration(&protocol, joint, &noise).unwrap();
        rows.extend(run_grasp_collection(&grasp, &objects, joint, &noise).unwrap());
        let mut buf = Vec::new();
        write_corpus(&mut buf, &rows).unwrap();
        (rows, buf)
    };
    let (rows, first) = corpus();
    let (_, second) = corpus();
    let options = FitOptions { restarts: 2, max_samples: Some(300), optimize_samples: Some(150), ..FitOptions::default() };
    let model = fit(&rows, &options).unwrap();
    let settings = ComparisonSettings { trials: 2, trial_duration: 2.5, seed: 13, ..ComparisonSettings::default() };
    let compare = || {
        let (rep, outcomes) = run_grasp_comparison(
            joint,
            &objects,
            &settings,
            &noise,
            &model,
            ControllerKind::Pid,
            ControllerKind::Admittance,
        )
        .unwrap();
        let mut bytes = serde_json::to_vec_pretty(&rep).unwrap();
        for o in &outcomes {
            for run in [&o.baseline, &o.candidate].into_iter().flatten() {
                write_trace(&mut bytes, &run.trace).unwrap();
            }
        }
        bytes
    };
    let (a, b) = (compare(), compare());
    let elapsed = start.elapsed();
    let pass = first == second && a == b && !first.is_empty();
    report(
        8,
        "determinism",
        pass,
        format!("corpus {} bytes identical: {}; report+traces {} bytes identical: {}", first.len(), first == second, a.len(), a == b),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_9_pendulum_energy() {
    let start = Instant::now();
    let params = PlantParams {
        weight_mass: 0.2,
        viscous_friction: 0.0,
        coulomb_friction: 0.0,
        extensor_stiffness: 0.0,
        extensor_preload: 0.0,
        joint_limits: JointLimits { lo: -10.0, hi: 10.0 },
        ..PlantParams::default()
    };
    // |lp - la| > r keeps the cable geometry feasible at every angle of the swing
    let routing = TendonRouting {
        pulley_offset_len: 0.02,
        anchor_offset_len: 0.012,
        anchor_angle: 0.0,
        pulley_angle: 1.0,
        pulley_radius: 0.004,
    };
    let mut s = PlantState { joint_angle: 0.3, joint_vel: 0.0, motor_angle: 0.0, motor_vel: 0.0, temperature: 20.0 };
    let e0 = mechanical_energy(&params, &s);
    let mut drift: f64 = 0.0;
    for _ in 0..10_000 {
        s = plant_step(&params, &s, &routing, &Actuation::None, None, 1e-3).unwrap();
        drift = drift.max(((mechanical_energy(&params, &s) - e0) / e0).abs());
    }
    let elapsed = start.elapsed();
    let pass = drift < 1e-3;
    report(9, "unactuated pendulum energy drift", pass, format!("max relative drift {:.3e}", drift), elapsed);
    assert!(pass);
}
