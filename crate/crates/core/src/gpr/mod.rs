//! Gaussian-process regression of joint torque from proprioceptive features.
//!
//! Covariance is an RBF term plus index-delta white noise. Hyperparameters
//! maximize the log marginal likelihood (Cholesky-based), and predictions
//! return the posterior mean and standard deviation. Inputs are z-scored per
//! feature and targets standardized using training statistics only, so the
//! isotropic length scale is meaningful across amps, radians and degrees.

mod kernel;
mod optimize;
mod posterior;
mod sample;

use std::io::{Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kernel::{kernel_eval, KernelHyperparams, LengthScale};
pub use optimize::{optimize_hyperparams, restart_grid, OptimizationOutcome, RestartOutcome, SearchSettings};
pub use posterior::{log_marginal_likelihood, Inputs, Posterior, JITTER_MAX, JITTER_START};
pub use sample::{
    read_corpus, write_corpus, CorpusError, FeatureVector, SampleRecord, CORPUS_HEADER, FEATURE_DIM, FEATURE_NAMES,
    TEMPERATURE_BAND,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MODEL_KIND: &str = "gpr-model";

/// Standard deviations below this are replaced by one.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GprError {
    #[error("not enough data: {n} samples, at least {required} required")]
    NotEnoughData { n: usize, required: usize },
    #[error("invalid sample at row {row}: {reason}")]
    InvalidSample { row: usize, reason: String },
    #[error("degenerate data: all training inputs are identical")]
    DegenerateData,
    #[error("gram matrix is ill-conditioned: factorization failed with jitter up to {max_jitter:e}")]
    IllConditioned { max_jitter: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("R^2 is undefined: test targets have zero variance")]
    UndefinedR2,
    #[error("model file: {0}")]
    Format(String),
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-feature z-score statistics plus target mean and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > MIN_STD { std } else { 1.0 })
}

impl Standardization {
    pub fn from_data(inputs: &Inputs, targets: &[f64]) -> Self {
        let dim = inputs.dim();
        let (feature_mean, feature_std) = (0..dim)
            .map(|c| mean_std(&inputs.rows().map(|r| r[c]).collect::<Vec<_>>()))
            .unzip();
        let (target_mean, target_std) = mean_std(targets);
        Self { feature_mean, feature_std, target_mean, target_std }
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.feature_mean).zip(&self.feature_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn destandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.feature_mean).zip(&self.feature_std).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn standardize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn destandardize_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}

fn default_restarts() -> usize {
    8
}
fn default_max_iterations() -> usize {
    500
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_max_samples() -> Option<usize> {
    Some(2000)
}
fn default_optimize_samples() -> Option<usize> {
    Some(400)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Absolute spread of log-likelihood values across the simplex at convergence.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Uniform seeded subsample cap on the training set.
    #[serde(default = "default_max_samples")]
    pub max_samples: Option<usize>,
    /// Size of the seeded subset used for the hyperparameter search; the final
    /// posterior is always conditioned on the full (capped) training set.
    #[serde(default = "default_optimize_samples")]
    pub optimize_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// One length scale per feature instead of a shared one.
    #[serde(default)]
    pub per_feature_length_scales: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: default_restarts(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            max_samples: default_max_samples(),
            optimize_samples: default_optimize_samples(),
            seed: 0,
            per_feature_length_scales: false,
        }
    }
}

/// What happened during [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_input: usize,
    pub n_train: usize,
    pub n_optimize: usize,
    /// Set when the training cap forced a seeded subsample.
    pub subsampled: bool,
    pub restarts: Vec<RestartOutcome>,
    pub best_restart: usize,
    /// Log marginal likelihood of the final model on its full training set.
    pub lml: f64,
}

/// Fitted torque estimator: standardization plus conditioned posterior.
#[derive(Debug, Clone)]
pub struct GprModel {
    label: Option<String>,
    standardization: Standardization,
    posterior: Posterior,
    summary: Option<FitSummary>,
}

/// Posterior mean and standard deviation in physical units (Nm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub r2: f64,
    pub n: usize,
}

fn seeded_subset(n: usize, cap: Option<usize>, seed: u64) -> Option<Vec<usize>> {
    match cap {
        Some(cap) if n > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = index::sample(&mut rng, n, cap).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        _ => None,
    }
}

fn validate_samples(samples: &[SampleRecord]) -> Result<(), GprError> {
    for (row, s) in samples.iter().enumerate() {
        s.validate().map_err(|reason| GprError::InvalidSample { row, reason })?;
    }
    Ok(())
}

fn has_two_distinct(inputs: &Inputs) -> bool {
    let first = inputs.row(0);
    inputs.rows().any(|r| r != first)
}

/// Fit a model to calibration samples.
pub fn fit(samples: &[SampleRecord], options: &FitOptions) -> Result<GprModel, GprError> {
    if samples.len() < 2 {
        return Err(GprError::NotEnoughData { n: samples.len(), required: 2 });
    }
    validate_samples(samples)?;

    let chosen: Vec<&SampleRecord> = match seeded_subset(samples.len(), options.max_samples, options.seed) {
        Some(idx) => idx.iter().map(|&i| &samples[i]).collect(),
        None => samples.iter().collect(),
    };
    let rows: Vec<[f64; FEATURE_DIM]> = chosen.iter().map(|s| s.features.to_array()).collect();
    let raw_inputs = Inputs::from_rows(&rows)?;
    if !has_two_distinct(&raw_inputs) {
        return Err(GprError::DegenerateData);
    }
    let raw_targets: Vec<f64> = chosen.iter().map(|s| s.torque).collect();
    let standardization = Standardization::from_data(&raw_inputs, &raw_targets);
    let z_rows: Vec<Vec<f64>> = raw_inputs.rows().map(|r| standardization.standardize(r)).collect();
    let inputs = Inputs::from_rows(&z_rows)?;
    let targets: Vec<f64> = raw_targets.iter().map(|&y| standardization.standardize_target(y)).collect();

    let opt_seed = options.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let (opt_inputs, opt_targets) = match seeded_subset(inputs.len(), options.optimize_samples, opt_seed) {
        Some(idx) => (inputs.select(&idx), idx.iter().map(|&i| targets[i]).collect()),
        None => (inputs.clone(), targets.clone()),
    };
    let settings = SearchSettings {
        restarts: options.restarts,
        max_iterations: options.max_iterations,
        tolerance: options.tolerance,
        per_feature: options.per_feature_length_scales,
    };
    let outcome = optimize_hyperparams(&opt_inputs, &opt_targets, &settings)?;
    let hp = outcome.best().best.clone();
    let posterior = Posterior::new(inputs, targets, hp)?;
    let summary = FitSummary {
        n_input: samples.len(),
        n_train: chosen.len(),
        n_optimize: opt_inputs.len(),
        subsampled: chosen.len() < samples.len(),
        lml: posterior.log_marginal_likelihood(),
        best_restart: outcome.best_restart,
        restarts: outcome.restarts,
    };
    Ok(GprModel { label: None, standardization, posterior, summary: Some(summary) })
}

impl GprModel {
    /// Condition on samples with fixed hyperparameters (no search).
    pub fn with_hyperparams(samples: &[SampleRecord], hp: KernelHyperparams) -> Result<Self, GprError> {
        if samples.is_empty() {
            return Err(GprError::NotEnoughData { n: 0, required: 1 });
        }
        validate_samples(samples)?;
        let rows: Vec<[f64; FEATURE_DIM]> = samples.iter().map(|s| s.features.to_array()).collect();
        let raw_inputs = Inputs::from_rows(&rows)?;
        let raw_targets: Vec<f64> = samples.iter().map(|s| s.torque).collect();
        let standardization = Standardization::from_data(&raw_inputs, &raw_targets);
        let z_rows: Vec<Vec<f64>> = raw_inputs.rows().map(|r| standardization.standardize(r)).collect();
        let targets = raw_targets.iter().map(|&y| standardization.standardize_target(y)).collect();
        let posterior = Posterior::new(Inputs::from_rows(&z_rows)?, targets, hp)?;
        Ok(Self { label: None, standardization, posterior, summary: None })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        self.posterior.hyperparams()
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn summary(&self) -> Option<&FitSummary> {
        self.summary.as_ref()
    }

    pub fn n_train(&self) -> usize {
        self.posterior.inputs().len()
    }

    /// Log marginal likelihood in standardized units.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.posterior.log_marginal_likelihood()
    }

    pub fn predict(&self, x: &FeatureVector) -> Prediction {
        let z = self.standardization.standardize(&x.to_array());
        let (mean, var) = self.posterior.predict(&z).expect("feature dimension is fixed");
        Prediction {
            mean: self.standardization.destandardize_target(mean),
            std: var.sqrt() * self.standardization.target_std,
        }
    }

    pub fn predict_mean(&self, x: &FeatureVector) -> f64 {
        let z = self.standardization.standardize(&x.to_array());
        self.standardization.destandardize_target(self.posterior.mean(&z))
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), GprError> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: MODEL_KIND.to_string(),
            label: self.label.clone(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            standardization: self.standardization.clone(),
            hyperparams: self.posterior.hyperparams().clone(),
            jitter: self.posterior.jitter(),
            training_inputs: self.posterior.inputs().rows().map(|r| r.to_vec()).collect(),
            training_targets: self.posterior.targets().to_vec(),
            fit_summary: self.summary.clone(),
        };
        serde_json::to_writer_pretty(w, &file).map_err(|e| GprError::Format(e.to_string()))
    }

    pub fn load<R: Read>(r: R) -> Result<Self, GprError> {
        let file: ModelFile = serde_json::from_reader(r).map_err(|e| GprError::Format(e.to_string()))?;
        if file.kind != MODEL_KIND {
            return Err(GprError::Format(format!("expected kind {MODEL_KIND:?}, found {:?}", file.kind)));
        }
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(GprError::Format(format!("unsupported format_version {}", file.format_version)));
        }
        if file.feature_names.len() != FEATURE_DIM || file.standardization.feature_mean.len() != FEATURE_DIM {
            return Err(GprError::DimensionMismatch {
                expected: FEATURE_DIM,
                found: file.standardization.feature_mean.len(),
            });
        }
        let inputs = Inputs::from_rows(&file.training_inputs)?;
        let posterior = Posterior::with_jitter(inputs, file.training_targets, file.hyperparams, file.jitter)?;
        Ok(Self { label: file.label, standardization: file.standardization, posterior, summary: file.fit_summary })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    kind: String,
    label: Option<String>,
    feature_names: Vec<String>,
    standardization: Standardization,
    hyperparams: KernelHyperparams,
    jitter: f64,
    training_inputs: Vec<Vec<f64>>,
    training_targets: Vec<f64>,
    fit_summary: Option<FitSummary>,
}

/// MSE and coefficient of determination of predictions against targets.
pub fn metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics, GprError> {
    if targets.is_empty() {
        return Err(GprError::NotEnoughData { n: 0, required: 1 });
    }
    if predictions.len() != targets.len() {
        return Err(GprError::DimensionMismatch { expected: targets.len(), found: predictions.len() });
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum();
    if ss_tot <= 0.0 {
        return Err(GprError::UndefinedR2);
    }
    Ok(Metrics { mse: ss_res / n, r2: 1.0 - ss_res / ss_tot, n: targets.len() })
}

pub fn evaluate(model: &GprModel, test: &[SampleRecord]) -> Result<Metrics, GprError> {
    let preds: Vec<f64> = test.iter().map(|s| model.predict_mean(&s.features)).collect();
    let targets: Vec<f64> = test.iter().map(|s| s.torque).collect();
    metrics(&preds, &targets)
}
