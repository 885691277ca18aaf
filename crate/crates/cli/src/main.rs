//! `tendon-finger`: data generation, training and experiments for the
//! simulated tendon-driven finger.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tendon_finger::geometry::TendonRouting;

use crate::commands::Sweep;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "tendon-finger", version, about = "Torque estimation and admittance control for a simulated tendon-driven finger")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Restrict to these joints; overrides `joints`.
    #[arg(long = "joint")]
    joints: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if !self.joints.is_empty() {
            cfg.joints = Some(self.joints.clone());
            cfg.selected_joints()?;
        }
        let out = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate calibration and grasp corpora, one CSV per joint plus a manifest.
    Datagen(ConfigArgs),
    /// Fit a torque model to one corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        joint: String,
        /// Model file to write.
        #[arg(long, short)]
        out: PathBuf,
        /// Take `[fit]` options from this config.
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_samples: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Split each joint's corpus, fit, and report test MSE and R^2.
    Eval {
        #[command(flatten)]
        run: ConfigArgs,
        /// Where the corpora live; defaults to the output directory.
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
    },
    /// Run the grasp comparison between two controllers.
    Compare {
        #[command(flatten)]
        run: ConfigArgs,
        /// Trained model; overrides `compare.model`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compare estimated and simulated fingertip force during grasps.
    ForceExp {
        #[command(flatten)]
        run: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sweep the moment arm of a tendon routing over joint angle.
    MomentArm {
        /// Use the routing of a built-in joint.
        #[arg(long, conflicts_with_all = ["pulley_offset", "anchor_offset", "anchor_angle", "pulley_angle", "radius"])]
        joint: Option<String>,
        /// Distance from the joint axis to the pulley centre (m).
        #[arg(long)]
        pulley_offset: Option<f64>,
        /// Distance from the joint axis to the cable anchor (m).
        #[arg(long)]
        anchor_offset: Option<f64>,
        /// rad
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        anchor_angle: f64,
        /// rad
        #[arg(long, allow_negative_numbers = true)]
        pulley_angle: Option<f64>,
        /// Pulley radius (m).
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = -10.0, allow_negative_numbers = true)]
        from_deg: f64,
        #[arg(long, default_value_t = 100.0, allow_negative_numbers = true)]
        to_deg: f64,
        #[arg(long, default_value_t = 1.0)]
        step_deg: f64,
        /// Append the tangent-line construction and the absolute difference.
        #[arg(long)]
        verify: bool,
        /// Write to a file instead of standard output.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn routing_from_args(
    joint: Option<String>,
    pulley_offset: Option<f64>,
    anchor_offset: Option<f64>,
    anchor_angle: f64,
    pulley_angle: Option<f64>,
    radius: Option<f64>,
) -> Result<TendonRouting, CliError> {
    if let Some(label) = joint {
        let joints = tendon_finger::harness::default_joints();
        return joints.iter().find(|j| j.label == label).map(|j| j.routing).ok_or_else(|| {
            CliError::Invalid(format!("unknown joint {label:?}; known joints: {}", tendon_finger::harness::JOINT_LABELS.join(", ")))
        });
    }
    match (pulley_offset, anchor_offset, pulley_angle, radius) {
        (Some(lp), Some(la), Some(p), Some(r)) => Ok(TendonRouting {
            pulley_offset_len: lp,
            anchor_offset_len: la,
            anchor_angle,
            pulley_angle: p,
            pulley_radius: r,
        }),
        _ => Err(CliError::Invalid(
            "give --joint, or all of --pulley-offset, --anchor-offset, --pulley-angle and --radius".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Invalid("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Datagen(args) => {
            let (cfg, out) = args.load()?;
            commands::datagen(&cfg, &out)
        }
        Command::Train { corpus, joint, out, config, max_samples, restarts, seed } => {
            let mut options = match config {
                Some(path) => RunConfig::load(&path)?.fit,
                None => Default::default(),
            };
            if max_samples.is_some() {
                options.max_samples = max_samples;
            }
            if let Some(r) = restarts {
                options.restarts = r;
            }
            if let Some(s) = seed {
                options.seed = s;
            }
            commands::train(&corpus, &joint, &out, &options)
        }
        Command::Eval { run, corpus_dir } => {
            let (cfg, out) = run.load()?;
            let corpus_dir = corpus_dir.unwrap_or_else(|| out.clone());
            commands::eval(&cfg, &corpus_dir, &out)
        }
        Command::Compare { run, model, trials } => {
            let (mut cfg, out) = run.load()?;
            if let Some(t) = trials {
                cfg.compare.settings.trials = t;
                cfg.compare.settings.validate()?;
            }
            commands::compare(&cfg, model.as_deref(), &out.join("compare"))
        }
        Command::ForceExp { run, model } => {
            let (cfg, out) = run.load()?;
            commands::force_exp(&cfg, model.as_deref(), &out.join("force"))
        }
        Command::MomentArm {
            joint,
            pulley_offset,
            anchor_offset,
            anchor_angle,
            pulley_angle,
            radius,
            from_deg,
            to_deg,
            step_deg,
            verify,
            out,
        } => {
            let routing = routing_from_args(joint, pulley_offset, anchor_offset, anchor_angle, pulley_angle, radius)?;
            let (csv, worst) = commands::moment_arm_csv(&routing, &Sweep { from_deg, to_deg, step_deg }, verify)?;
            match out {
                Some(path) => std::fs::write(&path, csv).map_err(CliError::io(&path))?,
                None => print!("{csv}"),
            }
            if let Some(w) = worst {
                eprintln!("max |moment arm - tangent construction| = {w:e} m");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
