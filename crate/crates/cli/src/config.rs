use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tendon_finger::datagen::{CalibrationProtocol, GraspProtocol, JointSetup};
use tendon_finger::gpr::FitOptions;
use tendon_finger::harness::{default_joints, default_objects, ComparisonSettings, ControllerKind};
use tendon_finger::plant::ContactObject;
use tendon_finger::sim::NoiseModel;

use crate::error::CliError;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Everything a run needs, in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub output_dir: PathBuf,
    /// Joints to process, by label; all known joints when absent.
    #[serde(default)]
    pub joints: Option<Vec<String>>,
    /// Full joint definitions; a label matching a built-in joint replaces it.
    #[serde(default, rename = "joint")]
    pub custom_joints: Vec<JointSetup>,
    #[serde(default = "default_objects", rename = "object")]
    pub objects: Vec<ContactObject>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub calibration: Option<CalibrationProtocol>,
    #[serde(default)]
    pub grasp: Option<GraspProtocol>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub force: ForceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2, seed: 1 }
    }
}

fn first_joint() -> String {
    "IF-PIP".into()
}
fn pid() -> ControllerKind {
    ControllerKind::Pid
}
fn admittance() -> ControllerKind {
    ControllerKind::Admittance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default = "first_joint")]
    pub joint: String,
    #[serde(default = "pid")]
    pub baseline: ControllerKind,
    #[serde(default = "admittance")]
    pub candidate: ControllerKind,
    /// Trained model to use; trained from the configured protocols when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub settings: ComparisonSettings,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            joint: first_joint(),
            baseline: pid(),
            candidate: admittance(),
            model: None,
            settings: ComparisonSettings::default(),
        }
    }
}

/// Fingertip force check; trial settings come from `compare.settings`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceConfig {
    #[serde(default = "first_joint")]
    pub joint: String,
    #[serde(default)]
    pub model: Option<PathBuf>,
}

impl Default for ForceConfig {
    fn default() -> Self {
        Self { joint: first_joint(), model: None }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text).map_err(|message| CliError::Config { path: path.into(), message })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let value: toml::Value = toml::from_str(text).map_err(|e| e.to_string().trim_end().to_string())?;
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let at = e.path().to_string();
            if at == "." {
                e.inner().to_string()
            } else {
                format!("at `{at}`: {}", e.inner())
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), String> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(format!(
                "at `format_version`: unsupported value {}, expected {CONFIG_FORMAT_VERSION}",
                self.format_version
            ));
        }
        self.all_joints().map_err(|e| e.to_string())?;
        self.selected_joints().map_err(|e| e.to_string())?;
        for (i, o) in self.objects.iter().enumerate() {
            o.validate().map_err(|e| format!("at `object[{i}]`: {e}"))?;
        }
        if self.objects.is_empty() {
            return Err("at `object`: at least one object is required".into());
        }
        self.noise.validate().map_err(|e| format!("at `noise`: {e}"))?;
        if let Some(c) = &self.calibration {
            c.validate().map_err(|e| format!("at `calibration`: {e}"))?;
        }
        if let Some(g) = &self.grasp {
            if g.trials == 0 || !(g.trial_duration > 0.0 && g.sample_rate > 0.0) {
                return Err("at `grasp`: trials, trial_duration and sample_rate must be positive".into());
            }
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(format!("at `split.test_fraction`: {} is outside (0, 1)", self.split.test_fraction));
        }
        if self.fit.restarts == 0 {
            return Err("at `fit.restarts`: at least one restart is required".into());
        }
        self.compare.settings.validate().map_err(|e| format!("at `compare.settings`: {e}"))?;
        self.joint(&self.compare.joint).map_err(|e| format!("at `compare.joint`: {e}"))?;
        self.joint(&self.force.joint).map_err(|e| format!("at `force.joint`: {e}"))?;
        Ok(())
    }

    /// Built-in joints with custom definitions applied.
    pub fn all_joints(&self) -> Result<Vec<JointSetup>, CliError> {
        let mut joints = default_joints();
        for custom in &self.custom_joints {
            custom.validate().map_err(|e| CliError::Invalid(format!("joint {}: {e}", custom.label)))?;
            match joints.iter_mut().find(|j| j.label == custom.label) {
                Some(slot) => *slot = custom.clone(),
                None => joints.push(custom.clone()),
            }
        }
        Ok(joints)
    }

    pub fn joint(&self, label: &str) -> Result<JointSetup, CliError> {
        let all = self.all_joints()?;
        all.iter().find(|j| j.label == label).cloned().ok_or_else(|| {
            let known: Vec<_> = all.iter().map(|j| j.label.as_str()).collect();
            CliError::Invalid(format!("unknown joint {label:?}; known joints: {}", known.join(", ")))
        })
    }

    pub fn selected_joints(&self) -> Result<Vec<JointSetup>, CliError> {
        match &self.joints {
            None => self.all_joints(),
            Some(labels) => labels.iter().map(|l| self.joint(l)).collect(),
        }
    }
}
