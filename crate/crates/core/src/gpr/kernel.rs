use serde::{Deserialize, Serialize};

use super::GprError;

/// RBF length scale: one shared value, or one per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthScale {
    Isotropic(f64),
    PerFeature(Vec<f64>),
}

impl LengthScale {
    fn values(&self) -> &[f64] {
        match self {
            LengthScale::Isotropic(l) => std::slice::from_ref(l),
            LengthScale::PerFeature(ls) => ls,
        }
    }
}

/// `theta = {signal_std, length_scale, noise_std}`, all in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelHyperparams {
    pub signal_std: f64,
    pub length_scale: LengthScale,
    pub noise_std: f64,
}

impl KernelHyperparams {
    pub fn isotropic(signal_std: f64, length_scale: f64, noise_std: f64) -> Self {
        Self { signal_std, length_scale: LengthScale::Isotropic(length_scale), noise_std }
    }

    pub fn validate(&self, dim: usize) -> Result<(), GprError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_std) || !positive(self.noise_std) {
            return Err(GprError::InvalidHyperparams(format!(
                "signal_std and noise_std must be positive, got {} and {}",
                self.signal_std, self.noise_std
            )));
        }
        if !self.length_scale.values().iter().all(|&l| positive(l)) {
            return Err(GprError::InvalidHyperparams("length scales must be positive".into()));
        }
        if let LengthScale::PerFeature(ls) = &self.length_scale {
            if ls.len() != dim {
                return Err(GprError::DimensionMismatch { expected: dim, found: ls.len() });
            }
        }
        Ok(())
    }

    pub fn signal_var(&self) -> f64 {
        self.signal_std * self.signal_std
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_std * self.noise_std
    }

    /// `||(x - x2) / l||^2`.
    pub fn scaled_sq_dist(&self, x: &[f64], x2: &[f64]) -> f64 {
        match &self.length_scale {
            LengthScale::Isotropic(l) => {
                let d: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
                d / (l * l)
            }
            LengthScale::PerFeature(ls) => x
                .iter()
                .zip(x2)
                .zip(ls)
                .map(|((a, b), l)| {
                    let z = (a - b) / l;
                    z * z
                })
                .sum(),
        }
    }

    /// The RBF part alone.
    pub fn rbf(&self, x: &[f64], x2: &[f64]) -> f64 {
        self.signal_var() * (-0.5 * self.scaled_sq_dist(x, x2)).exp()
    }

    /// Log-space parameter vector `[ln sf, ln l.., ln sn]`.
    pub fn to_log_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.length_scale.values().len() + 2);
        p.push(self.signal_std.ln());
        p.extend(self.length_scale.values().iter().map(|l| l.ln()));
        p.push(self.noise_std.ln());
        p
    }

    pub fn from_log_params(p: &[f64], per_feature: bool) -> Self {
        let last = p.len() - 1;
        let length_scale = if per_feature {
            LengthScale::PerFeature(p[1..last].iter().map(|v| v.exp()).collect())
        } else {
            LengthScale::Isotropic(p[1].exp())
        };
        Self { signal_std: p[0].exp(), length_scale, noise_std: p[last].exp() }
    }
}

/// Composite covariance: RBF plus white noise.
///
/// The noise term is a Kronecker delta on training indices, so it only
/// contributes when `same_index` is set (the diagonal of a Gram matrix),
/// never merely because two inputs happen to be equal.
pub fn kernel_eval(hp: &KernelHyperparams, x: &[f64], x2: &[f64], same_index: bool) -> f64 {
    let noise = if same_index { hp.noise_var() } else { 0.0 };
    hp.rbf(x, x2) + noise
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_index_adds_noise() {
        let hp = KernelHyperparams::isotropic(1.3, 0.7, 0.2);
        let x = [0.1, -0.4, 2.0];
        assert!((kernel_eval(&hp, &x, &x, true) - (1.69 + 0.04)).abs() < 1e-15);
        // equal values at different indices: no noise
        assert!((kernel_eval(&hp, &x, &x, false) - 1.69).abs() < 1e-15);
    }

    #[test]
    fn decays_to_zero() {
        let hp = KernelHyperparams::isotropic(1.0, 1.0, 0.1);
        assert_eq!(kernel_eval(&hp, &[0.0], &[1e3], false), 0.0);
    }

    #[test]
    fn unit_case() {
        let hp = KernelHyperparams::isotropic(1.0, 1.0, 0.1);
        // ||x - x'||^2 = 2
        let v = kernel_eval(&hp, &[1.0, 0.0], &[0.0, 1.0], false);
        assert!((v - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn per_feature_scales() {
        let hp = KernelHyperparams {
            signal_std: 1.0,
            length_scale: LengthScale::PerFeature(vec![1.0, 2.0]),
            noise_std: 0.1,
        };
        assert!((hp.scaled_sq_dist(&[1.0, 2.0], &[0.0, 0.0]) - 2.0).abs() < 1e-15);
        assert!(hp.validate(2).is_ok());
        assert!(matches!(hp.validate(3), Err(GprError::DimensionMismatch { .. })));
    }

    #[test]
    fn log_params_round_trip() {
        let hp = KernelHyperparams::isotropic(0.8, 2.5, 0.03);
        let back = KernelHyperparams::from_log_params(&hp.to_log_params(), false);
        assert!((back.signal_std - 0.8).abs() < 1e-15);
        assert!((back.noise_std - 0.03).abs() < 1e-15);
    }
}
