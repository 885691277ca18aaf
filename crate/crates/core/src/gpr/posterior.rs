use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::KernelHyperparams;
use super::GprError;

/// First jitter tried after a plain factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter before the Gram matrix is declared ill-conditioned.
pub const JITTER_MAX: f64 = 1e-4;

/// Row-major block of `n` input points of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    data: Vec<f64>,
    dim: usize,
}

impl Inputs {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self, GprError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(GprError::DimensionMismatch { expected: dim, found: data.len() });
        }
        Ok(Self { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, GprError> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(GprError::DimensionMismatch { expected: dim, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Self::new(data, dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn select(&self, idx: &[usize]) -> Inputs {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Inputs { data, dim: self.dim }
    }
}

/// RBF Gram matrix with `noise_var + jitter` on the diagonal.
///
/// The white-noise variance enters exactly once, as the `sigma_n^2 I` term.
fn gram(inputs: &Inputs, hp: &KernelHyperparams) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    let diag = hp.signal_var() + hp.noise_var();
    for j in 0..n {
        let xj = inputs.row(j);
        k[(j, j)] = diag;
        for i in (j + 1)..n {
            let v = hp.rbf(inputs.row(i), xj);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn add_diag(k: &mut DMatrix<f64>, v: f64) {
    for i in 0..k.nrows() {
        k[(i, i)] += v;
    }
}

/// Cholesky factor of the Gram matrix, escalating jitter by decades from
/// [`JITTER_START`] to [`JITTER_MAX`]. Returns the factor and the jitter used.
fn factorize(base: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), GprError> {
    if let Some(ch) = Cholesky::new(base.clone()) {
        return Ok((ch, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut k = base.clone();
        add_diag(&mut k, jitter);
        if let Some(ch) = Cholesky::new(k) {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(GprError::IllConditioned { max_jitter: JITTER_MAX })
}

fn factorize_with(inputs: &Inputs, hp: &KernelHyperparams, jitter: f64) -> Result<Cholesky<f64, Dyn>, GprError> {
    let mut k = gram(inputs, hp);
    add_diag(&mut k, jitter);
    Cholesky::new(k).ok_or(GprError::IllConditioned { max_jitter: jitter })
}

fn lml_from_factor(factor: &Cholesky<f64, Dyn>, targets: &DVector<f64>, alpha: &DVector<f64>) -> f64 {
    let n = targets.len() as f64;
    let half_log_det: f64 = factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * targets.dot(alpha) - half_log_det - 0.5 * n * (2.0 * PI).ln()
}

/// `-1/2 y^T (K + sn^2 I)^-1 y - 1/2 log|K + sn^2 I| - n/2 log(2 pi)` via Cholesky.
pub fn log_marginal_likelihood(inputs: &Inputs, targets: &[f64], hp: &KernelHyperparams) -> Result<f64, GprError> {
    check_shapes(inputs, targets)?;
    hp.validate(inputs.dim())?;
    let (factor, _) = factorize(gram(inputs, hp))?;
    let y = DVector::from_column_slice(targets);
    let alpha = factor.solve(&y);
    Ok(lml_from_factor(&factor, &y, &alpha))
}

fn check_shapes(inputs: &Inputs, targets: &[f64]) -> Result<(), GprError> {
    if inputs.is_empty() {
        return Err(GprError::NotEnoughData { n: 0, required: 1 });
    }
    if inputs.len() != targets.len() {
        return Err(GprError::DimensionMismatch { expected: inputs.len(), found: targets.len() });
    }
    Ok(())
}

/// A GP conditioned on fixed data and hyperparameters, in whatever units the
/// caller supplies. [`super::GprModel`] wraps this with standardization.
#[derive(Debug, Clone)]
pub struct Posterior {
    inputs: Inputs,
    targets: DVector<f64>,
    hp: KernelHyperparams,
    factor: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl Posterior {
    pub fn new(inputs: Inputs, targets: Vec<f64>, hp: KernelHyperparams) -> Result<Self, GprError> {
        check_shapes(&inputs, &targets)?;
        hp.validate(inputs.dim())?;
        let (factor, jitter) = factorize(gram(&inputs, &hp))?;
        Ok(Self::assemble(inputs, targets, hp, factor, jitter))
    }

    /// Rebuild with a known jitter; used when loading a saved model so the
    /// factor is reproduced bit for bit.
    pub(crate) fn with_jitter(
        inputs: Inputs,
        targets: Vec<f64>,
        hp: KernelHyperparams,
        jitter: f64,
    ) -> Result<Self, GprError> {
        check_shapes(&inputs, &targets)?;
        hp.validate(inputs.dim())?;
        let factor = factorize_with(&inputs, &hp, jitter)?;
        Ok(Self::assemble(inputs, targets, hp, factor, jitter))
    }

    fn assemble(inputs: Inputs, targets: Vec<f64>, hp: KernelHyperparams, factor: Cholesky<f64, Dyn>, jitter: f64) -> Self {
        let targets = DVector::from_vec(targets);
        let alpha = factor.solve(&targets);
        Self { inputs, targets, hp, factor, alpha, jitter }
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        self.targets.as_slice()
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hp
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &[f64] {
        self.alpha.as_slice()
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        lml_from_factor(&self.factor, &self.targets, &self.alpha)
    }

    fn cross_cov(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.inputs.len(), self.inputs.rows().map(|xi| self.hp.rbf(xi, x)))
    }

    /// Posterior mean only; `O(N)` per point.
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.inputs.rows().zip(self.alpha.iter()).map(|(xi, a)| self.hp.rbf(xi, x) * a).sum()
    }

    /// Posterior mean and variance of the latent function at `x`.
    ///
    /// The variance is `k(x, x) - k*^T (K + sn^2 I)^-1 k*` with
    /// `k(x, x) = sf^2` (a test point shares no index with the training set),
    /// floored at zero.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64), GprError> {
        if x.len() != self.inputs.dim() {
            return Err(GprError::DimensionMismatch { expected: self.inputs.dim(), found: x.len() });
        }
        let ks = self.cross_cov(x);
        let mean = ks.dot(&self.alpha);
        let v = self
            .factor
            .l_dirty()
            .solve_lower_triangular(&ks)
            .ok_or(GprError::IllConditioned { max_jitter: self.jitter })?;
        let var = (self.hp.signal_var() - v.dot(&v)).max(0.0);
        Ok((mean, var))
    }
}
