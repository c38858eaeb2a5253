use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koh::{KohModelState, PosteriorSample, Site};
use crate::linalg::cholesky;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FimConfig {
    /// Central-difference step as a fraction of each θ prior width.
    pub fd_step: f64,
    /// Evenly thinned subset of posterior samples used for the average.
    pub max_samples: Option<usize>,
}

impl Default for FimConfig {
    fn default() -> Self {
        Self { fd_step: 1e-4, max_samples: Some(100) }
    }
}

/// Fisher information of θ for a Gaussian with θ-dependent mean and
/// covariance, by central differences with the given per-coordinate steps.
/// A zero step marks a fixed coordinate and leaves its row and column zero.
pub fn fisher_information_with<F>(theta: &[f64], steps: &[f64], moments: F) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    let h = theta.len();
    let (_, sigma) = moments(theta);
    let chol = cholesky(&sigma, 0.0)?;
    let mut dmu = Vec::with_capacity(h);
    let mut a = Vec::with_capacity(h);
    let mut probe = theta.to_vec();
    for i in 0..h {
        if steps[i] == 0.0 {
            dmu.push(None);
            a.push(None);
            continue;
        }
        probe[i] = theta[i] + steps[i];
        let (mp, sp) = moments(&probe);
        probe[i] = theta[i] - steps[i];
        let (mm, sm) = moments(&probe);
        probe[i] = theta[i];
        let scale = 0.5 / steps[i];
        let dm = (mp - mm) * scale;
        let ds = (sp - sm) * scale;
        if dm.iter().chain(ds.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DerivativeFailure { param: i });
        }
        a.push(Some(chol.solve_mat(&ds)));
        dmu.push(Some((chol.solve_vec(&dm), dm)));
    }
    let mut fim = DMatrix::zeros(h, h);
    for i in 0..h {
        for j in 0..=i {
            let (Some((si, _)), Some((_, mj))) = (&dmu[i], &dmu[j]) else { continue };
            let (ai, aj) = (a[i].as_ref().unwrap(), a[j].as_ref().unwrap());
            let tr: f64 = (0..ai.nrows()).map(|r| ai.row(r).dot(&aj.column(r).transpose())).sum();
            let v = si.dot(mj) + 0.5 * tr;
            if !v.is_finite() {
                return Err(Error::DerivativeFailure { param: i });
            }
            fim[(i, j)] = v;
            fim[(j, i)] = v;
        }
    }
    Ok(fim)
}

fn observation_moments(state: &KohModelState, omega: &PosteriorSample, design: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let em = state.emulator();
    let mut sites = state.field_sites(omega);
    sites.extend(design.iter().map(|x| Site::field(x, &omega.theta)));
    sites.extend(em.sim_sites.iter().cloned());
    (state.mean_vector(&em, &sites), state.cov_obs(omega, &sites))
}

/// Fisher information of θ under one posterior sample with the given
/// design points appended to the field rows.
pub fn fisher_information(
    state: &KohModelState,
    omega: &PosteriorSample,
    design: &[Vec<f64>],
    cfg: &FimConfig,
) -> Result<DMatrix<f64>> {
    let steps: Vec<f64> = state.spec.priors.theta.iter().map(|p| cfg.fd_step * p.width()).collect();
    fisher_information_with(&omega.theta, &steps, |t| {
        let mut w = omega.clone();
        w.theta = t.to_vec();
        observation_moments(state, &w, design)
    })
}

/// Log determinant of the averaged information matrix; `−∞` when singular.
pub fn d_optimality(fims: &[DMatrix<f64>]) -> f64 {
    let Some(first) = fims.first() else { return f64::NEG_INFINITY };
    let mut avg = DMatrix::zeros(first.nrows(), first.ncols());
    for f in fims {
        avg += f;
    }
    avg /= fims.len() as f64;
    let eig = SymmetricEigen::new(avg);
    let top = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&l| !(l > 1e-12 * top)) {
        return f64::NEG_INFINITY;
    }
    eig.eigenvalues.iter().map(|l| l.ln()).sum()
}

/// Evenly spaced subset of `n` indices of size at most `max`.
pub(crate) fn thin(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(k) if k > 0 && k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}
