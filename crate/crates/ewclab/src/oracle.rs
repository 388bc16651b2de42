//! Exact reference posteriors for checking the consolidation recursion.
//!
//! Two independent routes to ground truth:
//!
//! - [`exact_sequential_posterior`] runs closed-form conjugate Bayesian
//!   updating for the linear-Gaussian model y = theta' x with a diagonal
//!   design (every input row one-hot), where the posterior precision is
//!   lambda_prior * I + sum_t X_t' X_t / sigma^2 and stays diagonal. It never
//!   touches the training stack, so agreement with it is evidence, not
//!   circularity.
//! - [`dense_laplace`] measures the full Hessian of an arbitrary scalar
//!   objective by central finite differences at a verified optimum, for the
//!   cases the conjugate oracle cannot reach (non-diagonal designs, neural
//!   losses).

use nalgebra::DMatrix;

use crate::dataset::{Targets, TaskDataset};
use crate::error::{Error, Result};
use crate::params::{DiagPrecision, ParamVector};

/// A Gaussian over parameters. `dense_precision` is populated by the
/// finite-difference route; the conjugate route is diagonal by construction.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: ParamVector,
    pub precision_diag: DiagPrecision,
    pub dense_precision: Option<DMatrix<f64>>,
}

/// Conjugate posterior after observing `tasks` in any order. Requires every
/// task to be a one-hot-design regression dataset of the same width; the
/// model is y = theta' x with no bias.
pub fn exact_sequential_posterior(
    tasks: &[&TaskDataset],
    noise_variance: f64,
    lambda_prior: f64,
) -> Result<GaussianPosterior> {
    if !noise_variance.is_finite() || noise_variance <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise_variance must be finite and positive (got {noise_variance})"
        )));
    }
    if !lambda_prior.is_finite() || lambda_prior < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda_prior must be finite and nonnegative (got {lambda_prior})"
        )));
    }
    let first = tasks
        .first()
        .ok_or_else(|| Error::InvalidArgument("posterior over zero tasks".into()))?;
    let dim = first.input_dim();

    let mut precision = vec![lambda_prior; dim];
    let mut weighted_sum = vec![0.0; dim];
    for (t, task) in tasks.iter().enumerate() {
        if task.input_dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "oracle task width",
                expected: dim,
                got: task.input_dim(),
            });
        }
        let Targets::Regression(targets) = task.targets() else {
            return Err(Error::InvalidArgument(format!(
                "task {t}: conjugate oracle requires regression targets"
            )));
        };
        for (n, row) in task.inputs().iter().enumerate() {
            let coord = one_hot_coordinate(row).ok_or_else(|| {
                Error::InvalidArgument(format!("task {t}, example {n}: input row is not one-hot"))
            })?;
            let y = match targets[n].as_slice() {
                [y] => *y,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "task {t}, example {n}: expected scalar target, got width {}",
                        other.len()
                    )))
                }
            };
            precision[coord] += 1.0 / noise_variance;
            weighted_sum[coord] += y / noise_variance;
        }
    }

    // Coordinates never observed under a flat prior keep the prior mean 0.
    let mean: Vec<f64> = weighted_sum
        .iter()
        .zip(&precision)
        .map(|(w, p)| if *p > 0.0 { w / p } else { 0.0 })
        .collect();
    Ok(GaussianPosterior {
        mean: ParamVector::new(mean)?,
        precision_diag: DiagPrecision::new(precision)?,
        dense_precision: None,
    })
}

fn one_hot_coordinate(row: &[f64]) -> Option<usize> {
    let mut coord = None;
    for (i, v) in row.iter().enumerate() {
        if *v == 1.0 {
            if coord.is_some() {
                return None;
            }
            coord = Some(i);
        } else if *v != 0.0 {
            return None;
        }
    }
    coord
}

/// Default central-difference step for [`dense_laplace`].
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// Finite-difference Laplace approximation of `objective` at `params_opt`.
///
/// The gradient is measured first with the same step; if its inf-norm
/// exceeds `grad_tol` the point is rejected, since a Hessian taken away
/// from a stationary point does not describe a posterior. The returned
/// matrix is symmetrized, and `precision_diag` is its diagonal.
pub fn dense_laplace<F: Fn(&ParamVector) -> f64>(
    objective: F,
    params_opt: &ParamVector,
    step: f64,
    grad_tol: f64,
) -> Result<GaussianPosterior> {
    if !step.is_finite() || step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be finite and positive (got {step})"
        )));
    }
    if !grad_tol.is_finite() || grad_tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gradient tolerance must be finite and positive (got {grad_tol})"
        )));
    }
    let p = params_opt.len();
    if p == 0 {
        return Err(Error::InvalidArgument("empty parameter vector".into()));
    }

    let eval = |x: &mut ParamVector, i: usize, di: f64, j: usize, dj: f64| {
        x.as_mut_slice()[i] += di;
        x.as_mut_slice()[j] += dj;
        let v = objective(x);
        x.as_mut_slice()[i] -= di;
        x.as_mut_slice()[j] -= dj;
        v
    };
    let mut x = params_opt.clone();

    let mut grad_inf: f64 = 0.0;
    for i in 0..p {
        let fp = eval(&mut x, i, step, i, 0.0);
        let fm = eval(&mut x, i, -step, i, 0.0);
        grad_inf = grad_inf.max(((fp - fm) / (2.0 * step)).abs());
    }
    if grad_inf > grad_tol {
        return Err(Error::NotAtOptimum {
            grad_norm: grad_inf,
            tol: grad_tol,
        });
    }

    let f0 = objective(params_opt);
    let mut h = DMatrix::zeros(p, p);
    for i in 0..p {
        let fp = eval(&mut x, i, step, i, 0.0);
        let fm = eval(&mut x, i, -step, i, 0.0);
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (step * step);
        for j in (i + 1)..p {
            let fpp = eval(&mut x, i, step, j, step);
            let fpm = eval(&mut x, i, step, j, -step);
            let fmp = eval(&mut x, i, -step, j, step);
            let fmm = eval(&mut x, i, -step, j, -step);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    // Mixed entries are symmetric by construction; the explicit average
    // guards against any asymmetry introduced by future edits.
    let h = (h.transpose() + &h) * 0.5;
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "dense_laplace Hessian",
            index: 0,
        });
    }
    let diag: Vec<f64> = (0..p).map(|i| h[(i, i)].max(0.0)).collect();
    Ok(GaussianPosterior {
        mean: params_opt.clone(),
        precision_diag: DiagPrecision::new(diag)?,
        dense_precision: Some(h),
    })
}

/// Smallest eigenvalue of a symmetric matrix, for positive-semidefiniteness
/// checks on measured Hessians.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, b| a.min(*b))
}
