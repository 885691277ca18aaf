//! Hyperparameter search: Nelder-Mead in log space with multiple restarts
//! from a fixed Halton grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernel::KernelHyperparams;
use super::posterior::{log_marginal_likelihood, Inputs};
use super::GprError;

/// Search box in log space: (ln lower, ln upper) for signal std, length scale, noise std.
const SIGNAL_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091); // 1e-2 .. 1e2
const LENGTH_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 6.907_755_278_982_137); // 1e-2 .. 1e3
const NOISE_BOUNDS: (f64, f64) = (-13.815_510_557_964_274, std::f64::consts::LN_10); // 1e-6 .. 1e1

/// Restart grid box (narrower than the search box).
const SIGNAL_START: (f64, f64) = (0.3, 3.0);
const LENGTH_START: (f64, f64) = (0.2, 5.0);
const NOISE_START: (f64, f64) = (1e-3, 0.5);

const INITIAL_STEP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub initial: KernelHyperparams,
    pub initial_lml: f64,
    pub best: KernelHyperparams,
    pub best_lml: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationOutcome {
    pub restarts: Vec<RestartOutcome>,
    pub best_restart: usize,
}

impl OptimizationOutcome {
    pub fn best(&self) -> &RestartOutcome {
        &self.restarts[self.best_restart]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SearchSettings {
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub per_feature: bool,
}

fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn lerp_log((lo, hi): (f64, f64), t: f64) -> f64 {
    lo.ln() + t * (hi.ln() - lo.ln())
}

/// Starting points of the restarts (log space).
pub fn restart_grid(restarts: usize, dim: usize, per_feature: bool) -> Vec<Vec<f64>> {
    (1..=restarts)
        .map(|i| {
            let sf = lerp_log(SIGNAL_START, halton(i, 2));
            let l = lerp_log(LENGTH_START, halton(i, 3));
            let sn = lerp_log(NOISE_START, halton(i, 5));
            let mut p = vec![sf];
            let n_len = if per_feature { dim } else { 1 };
            p.extend(std::iter::repeat_n(l, n_len));
            p.push(sn);
            p
        })
        .collect()
}

fn bounds_for(i: usize, len: usize) -> (f64, f64) {
    if i == 0 {
        SIGNAL_BOUNDS
    } else if i == len - 1 {
        NOISE_BOUNDS
    } else {
        LENGTH_BOUNDS
    }
}

fn project(p: &mut [f64]) {
    let len = p.len();
    for (i, v) in p.iter_mut().enumerate() {
        let (lo, hi) = bounds_for(i, len);
        *v = v.clamp(lo, hi);
    }
}

struct Minimum {
    point: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
}

/// Bounded Nelder-Mead minimizer. The start point is a simplex vertex and the
/// best vertex never gets worse, so the result is at least as good as `start`.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, start: &[f64], max_iter: usize, tol: f64) -> Minimum {
    let n = start.len();
    let mut evals = 0usize;
    let mut eval = |p: &[f64]| {
        evals += 1;
        let v = f(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut s0 = start.to_vec();
    project(&mut s0);
    let v0 = eval(&s0);
    simplex.push((s0.clone(), v0));
    for i in 0..n {
        let mut p = s0.clone();
        p[i] += INITIAL_STEP;
        project(&mut p);
        if p[i] == s0[i] {
            p[i] -= INITIAL_STEP;
            project(&mut p);
        }
        let v = eval(&p);
        simplex.push((p, v));
    }

    let mut iterations = 0;
    while iterations < max_iter {
        // stable sort keeps ties in insertion order
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= tol {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut p);
            p
        };

        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < simplex[n].1 {
            let c = along(0.5);
            let v = eval(&c);
            (c, v)
        } else {
            let c = along(-0.5);
            let v = eval(&c);
            (c, v)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        // shrink toward the best vertex
        let best_point = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = best_point.iter().zip(&entry.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
            project(&mut p);
            let v = eval(&p);
            *entry = (p, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (point, value) = simplex.swap_remove(0);
    Minimum { point, value, iterations, evaluations: evals }
}

/// Maximize the log marginal likelihood over `(ln sf, ln l, ln sn)` from each
/// restart point. Restarts may run in parallel; the winner is the highest
/// final value, ties broken by the lower restart index.
pub fn optimize_hyperparams(
    inputs: &Inputs,
    targets: &[f64],
    settings: &SearchSettings,
) -> Result<OptimizationOutcome, GprError> {
    if settings.restarts == 0 {
        return Err(GprError::InvalidHyperparams("at least one restart is required".into()));
    }
    let per_feature = settings.per_feature;
    let objective = |p: &[f64]| -> f64 {
        let hp = KernelHyperparams::from_log_params(p, per_feature);
        match log_marginal_likelihood(inputs, targets, &hp) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let starts = restart_grid(settings.restarts, inputs.dim(), per_feature);
    let restarts: Vec<RestartOutcome> = starts
        .par_iter()
        .map(|start| {
            let initial_lml = -objective(start);
            let min = nelder_mead(objective, start, settings.max_iterations, settings.tolerance);
            RestartOutcome {
                initial: KernelHyperparams::from_log_params(start, per_feature),
                initial_lml,
                best: KernelHyperparams::from_log_params(&min.point, per_feature),
                best_lml: -min.value,
                iterations: min.iterations,
                evaluations: min.evaluations,
            }
        })
        .collect();

    let mut best_restart = 0;
    for (i, r) in restarts.iter().enumerate() {
        if r.best_lml > restarts[best_restart].best_lml {
            best_restart = i;
        }
    }
    if !restarts[best_restart].best_lml.is_finite() {
        return Err(GprError::IllConditioned { max_jitter: super::posterior::JITTER_MAX });
    }
    Ok(OptimizationOutcome { restarts, best_restart })
}
