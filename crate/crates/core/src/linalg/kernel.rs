use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    Periodic,
    ProductRbfPeriodic,
    KroneckerMultiOutput,
}

/// Stationary covariance kernel.
///
/// * `Rbf`: `var * exp(-0.5 * sum ((a_i - b_i) / l_i)^2)`
/// * `Periodic`: `var * exp(-2 * sum sin^2(pi |a_i - b_i| / period) / l_i^2)`
/// * `ProductRbfPeriodic`: RBF over `lengthscales` times a periodic factor with
///   `periodic_lengthscale`
/// * `KroneckerMultiOutput`: `task_covariance[s, t] * rbf(a, b)`
///
/// A single lengthscale is broadcast over every input dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic_lengthscale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_covariance: Option<DMatrix<f64>>,
}

impl KernelSpec {
    pub fn rbf(lengthscales: Vec<f64>, variance: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            lengthscales,
            variance,
            period: None,
            periodic_lengthscale: None,
            task_covariance: None,
        }
    }

    pub fn periodic(lengthscales: Vec<f64>, variance: f64, period: f64) -> Self {
        Self {
            family: KernelFamily::Periodic,
            period: Some(period),
            ..Self::rbf(lengthscales, variance)
        }
    }

    pub fn rbf_times_periodic(
        lengthscales: Vec<f64>,
        variance: f64,
        period: f64,
        periodic_lengthscale: f64,
    ) -> Self {
        Self {
            family: KernelFamily::ProductRbfPeriodic,
            period: Some(period),
            periodic_lengthscale: Some(periodic_lengthscale),
            ..Self::rbf(lengthscales, variance)
        }
    }

    /// Multi-output kernel with unit input variance; all output scale lives in
    /// `task_covariance`.
    pub fn kronecker(lengthscales: Vec<f64>, task_covariance: DMatrix<f64>) -> Self {
        Self {
            family: KernelFamily::KroneckerMultiOutput,
            task_covariance: Some(task_covariance),
            ..Self::rbf(lengthscales, 1.0)
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.task_covariance.as_ref().map_or(1, |b| b.nrows())
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        if self.lengthscales.len() != dim && self.lengthscales.len() != 1 {
            return Err(Error::DimensionMismatch {
                context: "kernel lengthscales",
                expected: dim,
                found: self.lengthscales.len(),
            });
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return bad(format!("lengthscale {l}"));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return bad(format!("variance {}", self.variance));
        }
        match self.family {
            KernelFamily::Periodic | KernelFamily::ProductRbfPeriodic => {
                match self.period {
                    Some(p) if p > 0.0 && p.is_finite() => {}
                    p => return bad(format!("period {p:?}")),
                }
                if self.family == KernelFamily::ProductRbfPeriodic {
                    match self.periodic_lengthscale {
                        Some(p) if p > 0.0 && p.is_finite() => {}
                        p => return bad(format!("periodic lengthscale {p:?}")),
                    }
                }
            }
            KernelFamily::KroneckerMultiOutput => {
                let Some(b) = &self.task_covariance else {
                    return bad("missing task covariance".into());
                };
                if !b.is_square() {
                    return bad("task covariance not square".into());
                }
                let scale = b.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
                if (b - b.transpose()).amax() > 1e-12 * scale {
                    return bad("task covariance not symmetric".into());
                }
                let eig = SymmetricEigen::new(b.clone());
                if eig.eigenvalues.iter().any(|e| *e < -1e-12 * scale) {
                    return bad("task covariance has a negative eigenvalue".into());
                }
            }
            KernelFamily::Rbf => {}
        }
        Ok(())
    }

    #[inline]
    fn lengthscale(&self, i: usize) -> f64 {
        if self.lengthscales.len() == 1 {
            self.lengthscales[0]
        } else {
            self.lengthscales[i]
        }
    }

    #[inline]
    fn rbf_exponent(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            let r = (a[i] - b[i]) / self.lengthscale(i);
            s += r * r;
        }
        -0.5 * s
    }

    #[inline]
    fn periodic_exponent(&self, a: &[f64], b: &[f64]) -> f64 {
        let period = self.period.unwrap_or(1.0);
        let mut s = 0.0;
        for i in 0..a.len() {
            let ell = match self.family {
                KernelFamily::ProductRbfPeriodic => self.periodic_lengthscale.unwrap_or(1.0),
                _ => self.lengthscale(i),
            };
            let sn = (std::f64::consts::PI * (a[i] - b[i]).abs() / period).sin();
            s += sn * sn / (ell * ell);
        }
        -2.0 * s
    }

    /// Kernel value on the input space alone (the task factor is excluded).
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let e = match self.family {
            KernelFamily::Rbf | KernelFamily::KroneckerMultiOutput => self.rbf_exponent(a, b),
            KernelFamily::Periodic => self.periodic_exponent(a, b),
            KernelFamily::ProductRbfPeriodic => self.rbf_exponent(a, b) + self.periodic_exponent(a, b),
        };
        self.variance * e.exp()
    }

    /// Periodic factor of a product kernel, exposed for checks.
    pub fn periodic_factor(&self, a: &[f64], b: &[f64]) -> f64 {
        self.periodic_exponent(a, b).exp()
    }

    #[inline]
    pub fn task_factor(&self, s: usize, t: usize) -> f64 {
        match &self.task_covariance {
            Some(b) => b[(s, t)],
            None => 1.0,
        }
    }

    #[inline]
    pub fn eval_tasks(&self, a: &[f64], s: usize, b: &[f64], t: usize) -> f64 {
        self.task_factor(s, t) * self.eval(a, b)
    }
}

fn check_points(spec: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    let dim = a.first().or(b.first()).map_or(spec.lengthscales.len(), Vec::len);
    spec.validate(dim)?;
    if let Some(p) = a.iter().chain(b).find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            context: "kernel_matrix points",
            expected: dim,
            found: p.len(),
        });
    }
    Ok(())
}

/// `|A| x |B|` matrix of input-space kernel values.
pub fn kernel_matrix(spec: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    check_points(spec, a, b)?;
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| spec.eval(&a[i], &b[j])))
}

/// Task-major `(p|A|) x (p|B|)` matrix: row `s * |A| + i` is task `s` at `a_i`.
pub fn kernel_matrix_multi(spec: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let base = kernel_matrix(spec, a, b)?;
    let p = spec.num_tasks();
    let (na, nb) = (a.len(), b.len());
    Ok(DMatrix::from_fn(p * na, p * nb, |r, c| {
        spec.task_factor(r / na, c / nb) * base[(r % na, c % nb)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rbf_values() {
        let k = KernelSpec::rbf(vec![1.0], 1.0);
        assert_eq!(k.eval(&[0.3], &[0.3]), 1.0);
        assert_relative_eq!(k.eval(&[0.0], &[1.0]), (-0.5_f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k.eval(&[0.0], &[1.0]), 0.60653, epsilon = 1e-5);
        let wide = KernelSpec::rbf(vec![7.3], 1.0);
        assert_eq!(wide.eval(&[2.0], &[2.0]), 1.0);
    }

    #[test]
    fn ard_uses_per_dimension_scales() {
        let k = KernelSpec::rbf(vec![1.0, 2.0], 3.0);
        let expect = 3.0 * (-1.0_f64).exp();
        assert_relative_eq!(k.eval(&[0.0, 0.0], &[1.0, 2.0]), expect, epsilon = 1e-14);
    }

    #[test]
    fn product_kernel_periodic_factor_repeats() {
        let k = KernelSpec::rbf_times_periodic(vec![2.0], 1.5, 1.3, 0.7);
        for x in [-1.0, 0.0, 2.5] {
            assert_relative_eq!(k.periodic_factor(&[x], &[x + 1.3]), 1.0, epsilon = 1e-12);
        }
        let p = KernelSpec::periodic(vec![0.8], 1.0, 2.0);
        assert_relative_eq!(p.eval(&[0.1], &[4.1]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(kernel_matrix(&KernelSpec::rbf(vec![0.0], 1.0), &[vec![0.0]], &[vec![1.0]]).is_err());
        assert!(kernel_matrix(&KernelSpec::rbf(vec![1.0], -1.0), &[vec![0.0]], &[vec![1.0]]).is_err());
        assert!(matches!(
            kernel_matrix(&KernelSpec::rbf(vec![1.0, 1.0], 1.0), &[vec![0.0, 1.0]], &[vec![1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(KernelSpec::kronecker(vec![1.0], b).validate(1).is_err());
    }

    #[test]
    fn kronecker_matches_explicit_expansion() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let spec = KernelSpec::kronecker(vec![0.9], b.clone());
        let pts: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.7]).collect();
        let big = kernel_matrix_multi(&spec, &pts, &pts).unwrap();
        let base = kernel_matrix(&spec, &pts, &pts).unwrap();
        let kron = b.kronecker(&base);
        assert!((big - kron).amax() < 1e-12);
    }
}
