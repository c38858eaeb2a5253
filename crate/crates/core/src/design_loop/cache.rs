use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::Result;
use crate::fast_update::{LocationId, PrecomputedCovariance, UpdateContext};
use crate::koh::{cov_cross, KohModelState, PosteriorSample, Site};
use crate::linalg::cholesky;

/// Precomputed covariance, conditioning context and predictive means of one
/// posterior sample.
#[derive(Clone, Debug)]
pub struct SampleCache {
    pub pre: Arc<PrecomputedCovariance>,
    pub ctx: UpdateContext,
    /// Predictive mean on the prediction grid, location-major.
    pub mean_pred: DVector<f64>,
    /// Predictive mean at every candidate, location-major.
    pub mean_cand: DVector<f64>,
    /// `Σoo⁻¹ (y − μ)` for the observed data.
    pub alpha: DVector<f64>,
}

impl SampleCache {
    pub fn build(state: &KohModelState, omega: &PosteriorSample, candidates: &[Vec<f64>], dense: bool) -> Result<Self> {
        let pre = if dense {
            PrecomputedCovariance::new(state, omega, candidates, usize::MAX)?
        } else {
            PrecomputedCovariance::lazy(state, omega, candidates)
        };
        let ctx = UpdateContext::new(&pre)?;
        let em = state.emulator();
        let (sites, y) = state.observed(omega);
        let alpha = &ctx.sigma_oo_inv * (y - state.mean_vector(&em, &sites));
        let obs = pre.initial_obs_rows();
        let mean_pred = state.mean_vector(&em, &state.pred_sites(omega)) + &ctx.cross * &alpha;
        let cand_sites: Vec<Site> = candidates.iter().map(|x| Site::field(x, &omega.theta)).collect();
        let cand_rows: Vec<usize> = (0..candidates.len()).flat_map(|c| pre.rows(LocationId::Candidate(c))).collect();
        let mean_cand = state.mean_vector(&em, &cand_sites) + pre.select(&cand_rows, &obs) * &alpha;
        Ok(Self { pre: Arc::new(pre), ctx, mean_pred, mean_cand, alpha })
    }

    pub fn candidate_mean(&self, c: usize) -> DVector<f64> {
        let p = self.pre.p;
        self.mean_cand.rows(c * p, p).into_owned()
    }
}

/// Caches for every posterior sample. Dense precomputation is used while the
/// total stays under `max_bytes`.
pub fn build_caches(state: &KohModelState, candidates: &[Vec<f64>], max_bytes: usize) -> Result<Vec<SampleCache>> {
    let p = state.n_outputs();
    let rows = (state.prediction_grid.len() + candidates.len() + state.data.n_field() + state.data.n_sim()) * p;
    let total = state.posterior.len().saturating_mul(rows * rows * std::mem::size_of::<f64>());
    let dense = total <= max_bytes;
    if !dense {
        log::info!("precomputed covariances need {total} bytes; evaluating entries lazily");
    }
    state.posterior.par_iter().map(|w| SampleCache::build(state, w, candidates, dense)).collect()
}

/// Posterior-averaged predictive mean as a function of the design input.
pub struct MeanSurface<'a> {
    state: &'a KohModelState,
    parts: Vec<(&'a PosteriorSample, Vec<Site>, &'a DVector<f64>)>,
}

impl<'a> MeanSurface<'a> {
    pub fn new(state: &'a KohModelState, caches: &'a [SampleCache]) -> Self {
        let em = state.emulator();
        let parts = state
            .posterior
            .iter()
            .zip(caches)
            .map(|(w, c)| {
                let mut sites = state.field_sites(w);
                sites.extend(em.sim_sites.iter().cloned());
                (w, sites, &c.alpha)
            })
            .collect();
        Self { state, parts }
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let p = self.state.n_outputs();
        let em = self.state.emulator();
        let mut acc = vec![0.0; p];
        for (w, sites, alpha) in &self.parts {
            let site = Site::field(x, &w.theta);
            let m = self.state.site_mean(&em, &site);
            let k = cov_cross(&self.state.phi1, w, &[site], sites, p) * *alpha;
            for t in 0..p {
                acc[t] += m[t] + k[t];
            }
        }
        let j = self.parts.len() as f64;
        acc.iter().map(|v| v / j).collect()
    }
}

/// Predictive means and covariance factors of every sample in its current
/// conditioning state.
pub fn predictive_factors(caches: &[SampleCache]) -> Result<(Vec<DVector<f64>>, Vec<crate::linalg::CholFactor>)> {
    let factors = caches.par_iter().map(|c| cholesky(&c.ctx.sigma_star, 0.0)).collect::<Result<Vec<_>>>()?;
    Ok((caches.iter().map(|c| c.mean_pred.clone()).collect(), factors))
}
