//! Mapping between kernel hyperparameters and the unconstrained coordinates
//! the sampler walks on.
//!
//! Positive quantities are stored as logarithms. A task covariance is stored
//! through its Cholesky factor: log diagonal entries and raw off-diagonal
//! entries, row by row.

use nalgebra::DMatrix;

use super::data::Prior;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, KernelFamily, KernelSpec};

/// Number of coordinates `kernel_coords` produces for `template`.
pub fn kernel_coord_len(template: &KernelSpec) -> usize {
    let l = template.lengthscales.len();
    match template.family {
        KernelFamily::Rbf => l + 1,
        KernelFamily::Periodic => l + 2,
        KernelFamily::ProductRbfPeriodic => l + 3,
        KernelFamily::KroneckerMultiOutput => {
            let p = template.num_tasks();
            l + p * (p + 1) / 2
        }
    }
}

pub fn kernel_coords(spec: &KernelSpec) -> Result<Vec<f64>> {
    let mut c: Vec<f64> = spec.lengthscales.iter().map(|l| l.ln()).collect();
    match spec.family {
        KernelFamily::Rbf => c.push(spec.variance.ln()),
        KernelFamily::Periodic => {
            c.push(spec.variance.ln());
            c.push(spec.period.unwrap_or(1.0).ln());
        }
        KernelFamily::ProductRbfPeriodic => {
            c.push(spec.variance.ln());
            c.push(spec.period.unwrap_or(1.0).ln());
            c.push(spec.periodic_lengthscale.unwrap_or(1.0).ln());
        }
        KernelFamily::KroneckerMultiOutput => {
            let b = spec
                .task_covariance
                .as_ref()
                .ok_or_else(|| Error::InvalidHyperparameter("missing task covariance".into()))?;
            let l = cholesky(b, 0.0)?.l;
            for i in 0..l.nrows() {
                for j in 0..=i {
                    c.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
                }
            }
        }
    }
    Ok(c)
}

pub fn kernel_from_coords(template: &KernelSpec, c: &[f64]) -> KernelSpec {
    debug_assert_eq!(c.len(), kernel_coord_len(template));
    let nl = template.lengthscales.len();
    let mut out = template.clone();
    out.lengthscales = c[..nl].iter().map(|v| v.exp()).collect();
    let rest = &c[nl..];
    match template.family {
        KernelFamily::Rbf => out.variance = rest[0].exp(),
        KernelFamily::Periodic => {
            out.variance = rest[0].exp();
            out.period = Some(rest[1].exp());
        }
        KernelFamily::ProductRbfPeriodic => {
            out.variance = rest[0].exp();
            out.period = Some(rest[1].exp());
            out.periodic_lengthscale = Some(rest[2].exp());
        }
        KernelFamily::KroneckerMultiOutput => {
            let p = template.num_tasks();
            let mut l = DMatrix::zeros(p, p);
            let mut k = 0;
            for i in 0..p {
                for j in 0..=i {
                    l[(i, j)] = if i == j { rest[k].exp() } else { rest[k] };
                    k += 1;
                }
            }
            out.variance = 1.0;
            out.task_covariance = Some(&l * l.transpose());
        }
    }
    out
}

/// Weakly informative default priors: log-normal(0, 1.5²) on every positive
/// hyperparameter, normal(0, 1.5²) on task-factor off-diagonals.
pub fn default_kernel_priors(template: &KernelSpec) -> Vec<Prior> {
    let ln = Prior::LogNormal { mu: 0.0, sigma: 1.5 };
    let mut p = vec![ln; template.lengthscales.len()];
    match template.family {
        KernelFamily::Rbf => p.push(ln),
        KernelFamily::Periodic => p.extend([ln, ln]),
        KernelFamily::ProductRbfPeriodic => p.extend([ln, ln, ln]),
        KernelFamily::KroneckerMultiOutput => {
            let t = template.num_tasks();
            for i in 0..t {
                for j in 0..=i {
                    p.push(if i == j { ln } else { Prior::Normal { mu: 0.0, sigma: 1.5 } });
                }
            }
        }
    }
    p
}
