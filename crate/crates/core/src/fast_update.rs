//! Incremental conditioning for one posterior sample.
//!
//! All covariances among prediction, candidate and observation locations are
//! computed once; each design round then extends the inverse observation
//! covariance with a block Schur complement and downdates the predictive
//! covariance, at quadratic instead of cubic cost in the number of
//! observations. With `p` outputs every location owns `p` consecutive rows
//! and the updates are rank `p`.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::koh::{cov_sym, KohModelState, PosteriorSample, Site};
use crate::linalg::{cholesky, symmetrize, try_cholesky, KernelSpec};

/// Default memory ceiling for one precomputed matrix.
pub const DEFAULT_MAX_BYTES: usize = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LocationId {
    Prediction(usize),
    Candidate(usize),
    Observation(usize),
}

#[derive(Clone, Debug)]
enum Storage {
    Dense(DMatrix<f64>),
    Lazy { sites: Vec<Site>, phi1: KernelSpec, omega: PosteriorSample, sim_nugget: f64 },
}

/// Joint covariance over prediction ∪ candidate ∪ observation locations for
/// one posterior sample. Rows are ordered prediction, candidate, observation.
#[derive(Clone, Debug)]
pub struct PrecomputedCovariance {
    storage: Storage,
    pub p: usize,
    pub n_pred: usize,
    pub n_cand: usize,
    pub n_obs: usize,
}

impl PrecomputedCovariance {
    /// Dense precomputation; fails with `PrecomputeTooLarge` past `max_bytes`.
    pub fn new(
        state: &KohModelState,
        omega: &PosteriorSample,
        candidates: &[Vec<f64>],
        max_bytes: usize,
    ) -> Result<Self> {
        let mut pre = Self::lazy(state, omega, candidates);
        let rows = pre.dim();
        let bytes = rows * rows * std::mem::size_of::<f64>();
        if bytes > max_bytes {
            return Err(Error::PrecomputeTooLarge { bytes, limit: max_bytes });
        }
        if let Storage::Lazy { sites, phi1, omega, sim_nugget } = &pre.storage {
            pre.storage = Storage::Dense(cov_sym(phi1, omega, sites, pre.p, *sim_nugget));
        }
        Ok(pre)
    }

    /// Same interface, entries evaluated on request.
    pub fn lazy(state: &KohModelState, omega: &PosteriorSample, candidates: &[Vec<f64>]) -> Self {
        let p = state.n_outputs();
        let mut sites = state.pred_sites(omega);
        let n_pred = sites.len();
        sites.extend(candidates.iter().map(|x| Site::field(x, &omega.theta)));
        let (obs, _) = state.observed(omega);
        let n_obs = obs.len();
        sites.extend(obs);
        Self {
            storage: Storage::Lazy {
                sites,
                phi1: state.phi1.clone(),
                omega: omega.clone(),
                sim_nugget: state.emulator().sim_nugget,
            },
            p,
            n_pred,
            n_cand: candidates.len(),
            n_obs,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn dim(&self) -> usize {
        (self.n_pred + self.n_cand + self.n_obs) * self.p
    }

    pub fn rows(&self, id: LocationId) -> Range<usize> {
        let p = self.p;
        let start = match id {
            LocationId::Prediction(i) => i,
            LocationId::Candidate(c) => self.n_pred + c,
            LocationId::Observation(k) => self.n_pred + self.n_cand + k,
        } * p;
        start..start + p
    }

    pub fn pred_rows(&self) -> Range<usize> {
        0..self.n_pred * self.p
    }

    pub fn initial_obs_rows(&self) -> Vec<usize> {
        let s = (self.n_pred + self.n_cand) * self.p;
        (s..s + self.n_obs * self.p).collect()
    }

    /// Submatrix for arbitrary row and column index lists.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])]),
            Storage::Lazy { sites, phi1, omega, sim_nugget } => {
                let p = self.p;
                DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
                    let (ri, rj) = (rows[i], cols[j]);
                    let (a, b) = (&sites[ri / p], &sites[rj / p]);
                    let (s, t) = (ri % p, rj % p);
                    let mut v = phi1.eval(&a.z, &b.z) * phi1.task_factor(s, t);
                    if a.field && b.field {
                        v += omega.phi2.eval(&a.x, &b.x) * omega.phi2.task_factor(s, t);
                    }
                    if ri == rj {
                        v += if a.field { omega.noise(s) } else { *sim_nugget };
                    }
                    v
                })
            }
        }
    }

    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> DMatrix<f64> {
        if let Storage::Dense(m) = &self.storage {
            return m.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned();
        }
        self.select(&rows.collect::<Vec<_>>(), &cols.collect::<Vec<_>>())
    }
}

/// Result of extending an inverse by one location (q rows).
#[derive(Clone, Debug)]
pub struct SchurExtension {
    /// Inverse of the enlarged matrix with the new rows first.
    pub inverse: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
}

fn conditional_block(
    inv: &DMatrix<f64>,
    sigma: Option<&DMatrix<f64>>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let mut u = inv * a;
    if let Some(sigma) = sigma {
        // One step of iterative refinement against the stored covariance.
        let mut r = a.clone();
        r.gemm(-1.0, sigma, &u, 1.0);
        u.gemm(1.0, inv, &r, 1.0);
    }
    let mut s = b - a.transpose() * &u;
    symmetrize(&mut s);
    for i in 0..s.nrows() {
        if !(s[(i, i)] > 1e-12 * b[(i, i)].abs()) {
            return Err(Error::ConditioningError { conditional_variance: s[(i, i)] });
        }
    }
    let l = try_cholesky(&s, 0.0).ok_or(Error::ConditioningError { conditional_variance: s.diagonal().min() })?;
    let linv = crate::linalg::triangular_solve(&l, &DMatrix::identity(s.nrows(), s.nrows()))?;
    let lambda = linv.transpose() * linv;
    Ok((u, s, lambda))
}

/// Block inverse of `[[B, Aᵀ], [A, Σ]]` given `Σ⁻¹`.
pub fn schur_extend(sigma_inv: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<SchurExtension> {
    let n = sigma_inv.nrows();
    let q = b.nrows();
    if a.shape() != (n, q) || !b.is_square() {
        return Err(Error::DimensionMismatch { context: "schur_extend", expected: n, found: a.nrows() });
    }
    let (u, _, lambda) = conditional_block(sigma_inv, None, a, b)?;
    let inverse = extended_inverse(sigma_inv, &u, &lambda);
    Ok(SchurExtension { inverse, u, lambda })
}

fn extended_inverse(sigma_inv: &DMatrix<f64>, u: &DMatrix<f64>, lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sigma_inv.nrows();
    let q = lambda.nrows();
    let mut out = DMatrix::zeros(n + q, n + q);
    let lu = u * lambda;
    out.view_mut((0, 0), (q, q)).copy_from(lambda);
    out.view_mut((q, 0), (n, q)).copy_from(&(-&lu));
    out.view_mut((0, q), (q, n)).copy_from(&(-lu.transpose()));
    let mut tail = sigma_inv.clone();
    tail.gemm(1.0, &lu, &u.transpose(), 1.0);
    out.view_mut((q, q), (n, n)).copy_from(&tail);
    symmetrize(&mut out);
    out
}

/// Conditioning state of one posterior sample after `round` selections.
#[derive(Clone, Debug)]
pub struct UpdateContext {
    pub sigma_oo_inv: DMatrix<f64>,
    /// Observation covariance in `obs_rows` order.
    pub sigma_oo: DMatrix<f64>,
    pub sigma_star: DMatrix<f64>,
    /// Prediction-by-observation covariance, columns in `obs_rows` order.
    pub cross: DMatrix<f64>,
    /// Rows of the precomputed matrix currently conditioned on, newest first.
    pub obs_rows: Vec<usize>,
    pub round: usize,
}

/// Everything needed to score or commit one candidate.
#[derive(Clone, Debug)]
pub struct CandidateStep {
    pub candidate: usize,
    pub u: DMatrix<f64>,
    /// Conditional covariance of the candidate's outputs (`1/λ` for one output).
    pub schur: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// Predictive-by-candidate conditional covariance.
    pub v: DMatrix<f64>,
    /// Multiply-adds spent computing this step.
    pub flops: u64,
}

impl UpdateContext {
    /// Conditions on the observation rows of `pre`.
    pub fn new(pre: &PrecomputedCovariance) -> Result<Self> {
        Self::from_rows(pre, pre.initial_obs_rows())
    }

    /// Dense construction conditioned on an explicit row list.
    pub fn from_rows(pre: &PrecomputedCovariance, obs_rows: Vec<usize>) -> Result<Self> {
        let pred: Vec<usize> = pre.pred_rows().collect();
        let soo = pre.select(&obs_rows, &obs_rows);
        let chol = cholesky(&soo, 0.0)?;
        let sigma_oo_inv = chol.inverse();
        let cross = pre.select(&pred, &obs_rows);
        let w = chol.whiten_mat(&cross.transpose());
        let mut sigma_star = pre.select(&pred, &pred) - w.transpose() * w;
        symmetrize(&mut sigma_star);
        Ok(Self { sigma_oo_inv, sigma_oo: soo, sigma_star, cross, obs_rows, round: 0 })
    }

    pub fn n_obs_rows(&self) -> usize {
        self.obs_rows.len()
    }

    pub fn trace(&self) -> f64 {
        self.sigma_star.trace()
    }

    pub fn candidate_step(&self, pre: &PrecomputedCovariance, candidate: usize) -> Result<CandidateStep> {
        let rows: Vec<usize> = pre.rows(LocationId::Candidate(candidate)).collect();
        let a = pre.select(&self.obs_rows, &rows);
        let b = pre.select(&rows, &rows);
        let (u, schur, lambda) = conditional_block(&self.sigma_oo_inv, Some(&self.sigma_oo), &a, &b)?;
        let pred: Vec<usize> = pre.pred_rows().collect();
        let mut v = pre.select(&pred, &rows);
        v.gemm(-1.0, &self.cross, &u, 1.0);
        let (n, q, ns) = (self.obs_rows.len() as u64, rows.len() as u64, pred.len() as u64);
        let flops = n * n * q + n * q * q + ns * n * q + q * q * q;
        Ok(CandidateStep { candidate, u, schur, lambda, v, flops })
    }

    /// `tr(Σ*) − tr(Λ VᵀV)` without forming the downdated matrix.
    pub fn trace_after_update(&self, step: &CandidateStep) -> f64 {
        let vtv = step.v.transpose() * &step.v;
        self.trace() - step.lambda.component_mul(&vtv).sum()
    }

    /// `Σ* − V Λ Vᵀ`.
    pub fn rank_one_predictive(&self, step: &CandidateStep) -> Result<DMatrix<f64>> {
        let vl = &step.v * &step.lambda;
        let mut out = self.sigma_star.clone();
        out.gemm(-1.0, &vl, &step.v.transpose(), 1.0);
        symmetrize(&mut out);
        let scale = self.sigma_star.diagonal().amax().max(f64::MIN_POSITIVE);
        if let Some(i) = out.diagonal().iter().position(|d| !(*d >= -1e-8 * scale)) {
            return Err(Error::NumericalFailure {
                context: format!("downdated predictive variance {} at row {i}", out[(i, i)]),
                candidate: Some(step.candidate),
            });
        }
        Ok(out)
    }

    /// Context after conditioning on the candidate of `step`.
    pub fn commit(&self, pre: &PrecomputedCovariance, step: &CandidateStep) -> Result<Self> {
        let rows: Vec<usize> = pre.rows(LocationId::Candidate(step.candidate)).collect();
        let sigma_star = self.rank_one_predictive(step)?;
        let sigma_oo_inv = extended_inverse(&self.sigma_oo_inv, &step.u, &step.lambda);
        let pred: Vec<usize> = pre.pred_rows().collect();
        let head = pre.select(&pred, &rows);
        let mut cross = DMatrix::zeros(pred.len(), self.obs_rows.len() + rows.len());
        cross.view_mut((0, 0), (pred.len(), rows.len())).copy_from(&head);
        cross.view_mut((0, rows.len()), self.cross.shape()).copy_from(&self.cross);
        let (n, q) = (self.obs_rows.len(), rows.len());
        let a = pre.select(&self.obs_rows, &rows);
        let mut sigma_oo = DMatrix::zeros(n + q, n + q);
        sigma_oo.view_mut((0, 0), (q, q)).copy_from(&pre.select(&rows, &rows));
        sigma_oo.view_mut((q, 0), (n, q)).copy_from(&a);
        sigma_oo.view_mut((0, q), (q, n)).copy_from(&a.transpose());
        sigma_oo.view_mut((q, q), (n, n)).copy_from(&self.sigma_oo);
        let mut obs_rows = rows;
        obs_rows.extend_from_slice(&self.obs_rows);
        Ok(Self { sigma_oo_inv, sigma_oo, sigma_star, cross, obs_rows, round: self.round + 1 })
    }

    /// Predictive covariance after adding `candidate`, recomputed densely.
    pub fn dense_after(&self, pre: &PrecomputedCovariance, candidate: usize) -> Result<DMatrix<f64>> {
        let mut rows: Vec<usize> = pre.rows(LocationId::Candidate(candidate)).collect();
        rows.extend_from_slice(&self.obs_rows);
        Ok(Self::from_rows(pre, rows)?.sigma_star)
    }

    /// Trace after adding `candidate`, using the fast path and falling back to
    /// dense recomputation when it fails numerically.
    pub fn trace_with_fallback(&self, pre: &PrecomputedCovariance, candidate: usize) -> Result<f64> {
        match self.candidate_step(pre, candidate).and_then(|s| {
            let t = self.trace_after_update(&s);
            if t.is_finite() {
                Ok(t)
            } else {
                Err(Error::NumericalFailure { context: "trace update".into(), candidate: Some(candidate) })
            }
        }) {
            Ok(t) => Ok(t),
            Err(Error::NumericalFailure { .. }) => {
                log::warn!("fast trace update failed for candidate {candidate}; recomputing densely");
                Ok(self.dense_after(pre, candidate)?.trace())
            }
            Err(e) => Err(e),
        }
    }
}
