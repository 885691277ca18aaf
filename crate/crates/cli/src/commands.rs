use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tendon_finger::datagen::{run_calibration, run_grasp_collection, split_train_test, CorpusManifest, JointSetup};
use tendon_finger::geometry::{external_torque, moment_arm, tangent_line_moment_arm, JointAngle, TendonRouting};
use tendon_finger::gpr::{fit, read_corpus, write_corpus, FitOptions, GprModel, LengthScale, SampleRecord};
use tendon_finger::harness::{
    format_comparison, run_estimation, run_fingertip_force_experiment, run_grasp_comparison, write_trace,
    EstimationReport, JointCorpus, REPORT_FORMAT_VERSION, TRACE_HEADER,
};

use crate::config::RunConfig;
use crate::error::{corpus_error, CliError};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
    writeln!(w).and_then(|_| w.flush()).map_err(CliError::io(path))
}

fn load_corpus(path: &Path) -> Result<Vec<SampleRecord>, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    read_corpus(BufReader::new(file)).map_err(|e| corpus_error(path, e))
}

fn load_model(path: &Path) -> Result<GprModel, CliError> {
    let file = File::open(path).map_err(CliError::io(path))?;
    GprModel::load(BufReader::new(file)).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn save_model(path: &Path, model: &GprModel) -> Result<(), CliError> {
    let mut w = create(path)?;
    model.save(&mut w).map_err(|e| CliError::Numerical(format!("{}: {e}", path.display())))?;
    writeln!(w).and_then(|_| w.flush()).map_err(CliError::io(path))
}

fn file_safe(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn corpus_path(dir: &Path, joint: &str) -> PathBuf {
    dir.join(format!("corpus-{}.csv", file_safe(joint)))
}

/// Calibration rows first, then grasp rows.
fn generate_corpus(cfg: &RunConfig, joint: &JointSetup) -> Result<(Vec<SampleRecord>, CorpusManifest), CliError> {
    if cfg.calibration.is_none() && cfg.grasp.is_none() {
        return Err(CliError::Invalid("the config defines neither [calibration] nor [grasp]".into()));
    }
    let mut rows = match &cfg.calibration {
        Some(p) => run_calibration(p, joint, &cfg.noise)?,
        None => Vec::new(),
    };
    let n_cal = rows.len();
    if let Some(g) = &cfg.grasp {
        rows.extend(run_grasp_collection(g, &cfg.objects, joint, &cfg.noise)?);
    }
    let manifest = CorpusManifest::new(
        joint,
        cfg.calibration.as_ref(),
        cfg.grasp.as_ref().map(|g| (g, cfg.objects.as_slice())),
        &cfg.noise,
        n_cal,
        rows.len() - n_cal,
    );
    Ok((rows, manifest))
}

pub fn datagen(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    for joint in cfg.selected_joints()? {
        let (rows, manifest) = generate_corpus(cfg, &joint)?;
        let path = corpus_path(out, &joint.label);
        let mut w = create(&path)?;
        write_corpus(&mut w, &rows).map_err(CliError::io(&path))?;
        write_json(&path.with_extension("manifest.json"), &manifest)?;
        eprintln!("{}: {} rows -> {}", joint.label, rows.len(), path.display());
    }
    Ok(())
}

fn length_scale_text(l: &LengthScale) -> String {
    match l {
        LengthScale::Isotropic(v) => format!("{v:.6}"),
        LengthScale::PerFeature(v) => v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join("/"),
    }
}

fn fit_logged(rows: &[SampleRecord], options: &FitOptions, joint: &str) -> Result<GprModel, CliError> {
    let model = fit(rows, options)?.with_label(joint);
    if let Some(s) = model.summary().filter(|s| s.subsampled) {
        eprintln!(
            "note: {joint}: training set capped at {} of {} rows by seeded subsampling (seed {})",
            s.n_train, s.n_input, options.seed
        );
    }
    Ok(model)
}

pub fn train(corpus: &Path, joint: &str, out: &Path, options: &FitOptions) -> Result<(), CliError> {
    let rows = load_corpus(corpus)?;
    let model = fit_logged(&rows, options, joint)?;
    save_model(out, &model)?;
    let hp = model.hyperparams();
    let lml = model.log_marginal_likelihood();
    println!(
        "joint={joint} n_train={} lml={lml:.6} signal_std={:.6} length_scale={} noise_std={:.6}",
        model.n_train(),
        hp.signal_std,
        length_scale_text(&hp.length_scale),
        hp.noise_std
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<(), CliError> {
    let mut metrics = Vec::new();
    for joint in cfg.selected_joints()? {
        let rows = load_corpus(&corpus_path(corpus_dir, &joint.label))?;
        let (train, test) = split_train_test(&rows, cfg.split.test_fraction, cfg.split.seed);
        let outcome = run_estimation(&JointCorpus { joint: &joint.label, train: &train, test: &test }, &cfg.fit)?;
        let name = file_safe(&joint.label);
        save_model(&out.join(format!("model-{name}.json")), &outcome.model)?;
        let path = out.join(format!("predictions-{name}.csv"));
        let mut w = create(&path)?;
        let mut body = String::from("truth,mean,std\n");
        for (t, m, s) in &outcome.predictions {
            body.push_str(&format!("{t:?},{m:?},{s:?}\n"));
        }
        w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(CliError::io(&path))?;
        if outcome.metrics.n_train < train.len() {
            eprintln!("note: {}: trained on {} of {} rows", joint.label, outcome.metrics.n_train, train.len());
        }
        metrics.push(outcome.metrics);
    }
    println!("{:<8} {:>12} {:>8} {:>8} {:>8}", "joint", "mse [Nm^2]", "r2", "n_train", "n_test");
    for m in &metrics {
        println!("{:<8} {:>12.3e} {:>8.4} {:>8} {:>8}", m.joint, m.mse, m.r2, m.n_train, m.n_test);
    }
    write_json(&out.join("estimation-report.json"), &EstimationReport::new(metrics))
}

/// Loads the given model or trains one on a freshly generated corpus.
fn estimator(cfg: &RunConfig, joint: &JointSetup, model: Option<&Path>, out: &Path) -> Result<GprModel, CliError> {
    if let Some(path) = model {
        return load_model(path);
    }
    eprintln!("{}: no model given, training on the configured protocols", joint.label);
    let (rows, _) = generate_corpus(cfg, joint)?;
    let model = fit_logged(&rows, &cfg.fit, &joint.label)?;
    save_model(&out.join(format!("model-{}.json", file_safe(&joint.label))), &model)?;
    Ok(model)
}

#[derive(Serialize)]
struct TraceEntry {
    object: String,
    trial: usize,
    controller: String,
    file: Option<String>,
    flag: Option<String>,
}

#[derive(Serialize)]
struct TraceManifest {
    format_version: u32,
    kind: &'static str,
    header: &'static str,
    report: &'static str,
    traces: Vec<TraceEntry>,
}

pub fn compare(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let c = &cfg.compare;
    let joint = cfg.joint(&c.joint)?;
    let model = estimator(cfg, &joint, model.or(c.model.as_deref()), out)?;
    let (report, outcomes) =
        run_grasp_comparison(&joint, &cfg.objects, &c.settings, &cfg.noise, &model, c.baseline, c.candidate)?;

    let traces = out.join("traces");
    let mut entries = Vec::new();
    for o in &outcomes {
        for (role, run) in [("baseline", &o.baseline), ("candidate", &o.candidate)] {
            let kind = if role == "baseline" { c.baseline } else { c.candidate };
            let controller = serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from));
            let controller = format!("{role}-{}", controller.unwrap_or_default());
            let file = match run {
                Some(run) => {
                    let name = format!("{}-{:03}-{controller}.csv", o.object.name(), o.trial);
                    let path = traces.join(&name);
                    let mut w = create(&path)?;
                    write_trace(&mut w, &run.trace).map_err(CliError::io(&path))?;
                    Some(format!("traces/{name}"))
                }
                None => None,
            };
            entries.push(TraceEntry {
                object: o.object.name().into(),
                trial: o.trial,
                controller,
                file,
                flag: o.flag.clone(),
            });
        }
    }
    write_json(
        &out.join("manifest.json"),
        &TraceManifest {
            format_version: REPORT_FORMAT_VERSION,
            kind: "trace-manifest",
            header: TRACE_HEADER,
            report: "report.json",
            traces: entries,
        },
    )?;
    write_json(&out.join("report.json"), &report)?;
    print!("{}", format_comparison(&report));
    if !report.is_monotone() {
        eprintln!("note: reductions are not strictly decreasing from hard to soft objects");
    }
    Ok(())
}

pub fn force_exp(cfg: &RunConfig, model: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let joint = cfg.joint(&cfg.force.joint)?;
    let model = estimator(cfg, &joint, model.or(cfg.force.model.as_deref()), out)?;
    let report = run_fingertip_force_experiment(&joint, &cfg.objects, &cfg.compare.settings, &cfg.noise, &model)?;
    write_json(&out.join("force-report.json"), &report)?;
    println!(
        "joint={} samples={} excluded={} mean_abs_error_n={:.5} peak_abs_error_n={:.5} mse_n2={:.3e}",
        report.joint, report.samples, report.excluded, report.mean_abs_error, report.peak_abs_error, report.mse
    );
    Ok(())
}

pub struct Sweep {
    pub from_deg: f64,
    pub to_deg: f64,
    pub step_deg: f64,
}

impl Sweep {
    pub fn angles(&self) -> Result<Vec<f64>, CliError> {
        let Sweep { from_deg, to_deg, step_deg } = *self;
        if !(step_deg > 0.0 && from_deg.is_finite() && to_deg.is_finite() && to_deg >= from_deg) {
            return Err(CliError::Invalid(format!("bad sweep {from_deg}..{to_deg} step {step_deg} deg")));
        }
        let n = ((to_deg - from_deg) / step_deg + 1e-9).floor() as usize + 1;
        if n > 1_000_000 {
            return Err(CliError::Invalid(format!("sweep has {n} angles, at most 1000000 allowed")));
        }
        Ok((0..n).map(|i| from_deg + i as f64 * step_deg).collect())
    }
}

/// Moment arm sweep as CSV; infeasible angles keep a row with the reason.
pub fn moment_arm_csv(routing: &TendonRouting, sweep: &Sweep, verify: bool) -> Result<(String, Option<f64>), CliError> {
    routing.validate().map_err(|e| CliError::Invalid(format!("routing: {e}")))?;
    let mut out = String::from("angle_deg,moment_arm_m,torque_per_tension_m");
    if verify {
        out.push_str(",oracle_m,abs_diff_m");
    }
    out.push_str(",status\n");
    let mut worst: Option<f64> = None;
    for deg in sweep.angles()? {
        let a = JointAngle(deg.to_radians());
        out.push_str(&format!("{deg:?},"));
        let row = moment_arm(routing, a).and_then(|m| Ok((m.moment_arm, external_torque(routing, a, 1.0)?)));
        match row {
            Ok((arm, per_unit)) => {
                out.push_str(&format!("{arm:?},{per_unit:?}"));
                if verify {
                    match tangent_line_moment_arm(routing, a) {
                        Ok(oracle) => {
                            let diff = (arm - oracle).abs();
                            worst = Some(worst.map_or(diff, |w: f64| w.max(diff)));
                            out.push_str(&format!(",{oracle:?},{diff:?}"));
                        }
                        Err(_) => out.push_str(",,"),
                    }
                }
                out.push_str(",ok\n");
            }
            Err(e) => {
                out.push_str(if verify { ",,,," } else { ",," });
                out.push_str(&format!("\"{}\"\n", e.to_string().replace('"', "'")));
            }
        }
    }
    Ok((out, worst))
}
