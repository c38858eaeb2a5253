//! Closed-form Gaussian quantities relating mutual information and IMSPE for
//! a fixed parameter value.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::Result;
use crate::linalg::{cholesky, logdet_spd};

/// Mutual information carried by a reduction of the predictive covariance
/// from `prior` to `posterior`: `½(log|prior| − log|posterior|)`.
pub fn gaussian_mi(prior: &DMatrix<f64>, posterior: &DMatrix<f64>) -> Result<f64> {
    Ok(0.5 * (logdet_spd(prior)? - logdet_spd(posterior)?))
}

/// `−½ log(1 − ε vᵀΣ⁻¹v)`: the information of a rank-one reduction
/// `ΔΣ = ε vvᵀ`, exact by the matrix determinant lemma.
pub fn rank_one_mi(sigma0: &DMatrix<f64>, v: &DVector<f64>, eps: f64) -> Result<f64> {
    let chol = cholesky(sigma0, 0.0)?;
    let quad = v.dot(&chol.solve_vec(v));
    Ok(-0.5 * (-eps * quad).ln_1p())
}

/// Change in IMSPE for `ΔΣ = ε vvᵀ`.
pub fn rank_one_imspe_drop(v: &DVector<f64>, eps: f64) -> f64 {
    eps * v.norm_squared() / v.len() as f64
}

/// `[n*/(2λmax), n*/(2λmin)]` for the MI-to-IMSPE ratio.
pub fn ratio_envelope(sigma0: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(sigma0.clone());
    let n = sigma0.nrows() as f64;
    (n / (2.0 * eig.eigenvalues.max()), n / (2.0 * eig.eigenvalues.min()))
}

/// First-order limit of the ratio as ε → 0: `n*·vᵀΣ⁻¹v / (2‖v‖²)`.
pub fn ratio_limit(sigma0: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    let chol = cholesky(sigma0, 0.0)?;
    Ok(sigma0.nrows() as f64 * v.dot(&chol.solve_vec(v)) / (2.0 * v.norm_squared()))
}
