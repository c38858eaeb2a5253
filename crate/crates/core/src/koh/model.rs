use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{KohData, Prior};
use super::mcmc::{self, McmcConfig};
use super::params::{default_kernel_priors, kernel_coord_len, kernel_coords, kernel_from_coords};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, mvn_logpdf_chol, symmetrize, CholFactor, KernelSpec, SpdMatrix};
use crate::rng::tag;

/// Whether the observation-noise variance is shared by all outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    Shared,
    PerTask,
}

/// Mean assigned to simulator rows of the joint vector.
///
/// `Emulator` uses the stage-1 posterior mean at the simulator inputs, which
/// keeps the residual of those rows consistent with the field-row mean.
/// `Zero` is the literal zero mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimRowMean {
    Zero,
    #[default]
    Emulator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPriors {
    /// One prior per calibration parameter, on the natural scale.
    pub theta: Vec<Prior>,
    /// Priors on the unconstrained stage-1 kernel coordinates.
    pub phi1: Vec<Prior>,
    /// Priors on the unconstrained discrepancy kernel coordinates.
    pub phi2: Vec<Prior>,
    /// Priors on log noise variance (one entry, or one per output).
    pub sigma2: Vec<Prior>,
}

impl ModelPriors {
    pub fn with_defaults(theta: Vec<Prior>, phi1: &KernelSpec, phi2: &KernelSpec, noise_terms: usize) -> Self {
        Self {
            theta,
            phi1: default_kernel_priors(phi1),
            phi2: default_kernel_priors(phi2),
            sigma2: vec![Prior::LogNormal { mu: -3.0, sigma: 1.0 }; noise_terms],
        }
    }

    pub fn theta_box(&self) -> Vec<(f64, f64)> {
        self.theta
            .iter()
            .map(|p| match *p {
                Prior::Uniform { lo, hi } => (lo, hi),
                _ => (p.center() - 3.0 * p.width(), p.center() + 3.0 * p.width()),
            })
            .collect()
    }
}

/// Structural choices of the model: kernel families with starting values,
/// priors, and the noise and mean conventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub phi1_template: KernelSpec,
    pub phi2_template: KernelSpec,
    pub priors: ModelPriors,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub sim_mean: SimRowMean,
    /// Nugget added to the stage-1 covariance, relative to its mean diagonal.
    #[serde(default = "default_nugget")]
    pub stage1_nugget: f64,
}

fn default_nugget() -> f64 {
    1e-6
}

/// One posterior draw of (θ, φ₂, σ²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub theta: Vec<f64>,
    pub phi2: KernelSpec,
    pub sigma2: Vec<f64>,
}

impl PosteriorSample {
    #[inline]
    pub fn noise(&self, task: usize) -> f64 {
        if self.sigma2.len() == 1 {
            self.sigma2[0]
        } else {
            self.sigma2[task]
        }
    }
}

#[derive(Clone, Debug)]
pub struct PredictiveGaussian {
    /// Location-major: entry `i * p + t` is output `t` at grid point `i`.
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

/// A location in the joint model. Field-like sites (field data, selected or
/// candidate designs, prediction points) carry θ in their stage-1 input and
/// receive discrepancy and noise; simulator sites carry their own setting.
#[derive(Clone, Debug, PartialEq)]
pub struct Site {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub field: bool,
}

impl Site {
    pub fn field(x: &[f64], theta: &[f64]) -> Self {
        let mut z = x.to_vec();
        z.extend_from_slice(theta);
        Self { x: x.to_vec(), z, field: true }
    }

    pub fn sim(x: &[f64], t: &[f64]) -> Self {
        let mut z = x.to_vec();
        z.extend_from_slice(t);
        Self { x: x.to_vec(), z, field: false }
    }
}

/// An additional field-like point; `y = None` marks a designed but not yet
/// observed location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraPoint {
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
}

/// Partitioned joint covariance for one posterior sample.
#[derive(Clone, Debug)]
pub struct BlockCovariance {
    pub sigma_oo: DMatrix<f64>,
    pub sigma_star_o: DMatrix<f64>,
    pub sigma_star_star: DMatrix<f64>,
    pub mean_o: DVector<f64>,
    pub mean_star: DVector<f64>,
    /// Observation sites in row order: field, extra, simulator.
    pub obs_sites: Vec<Site>,
}

/// Stage-1 conditional mean surface with φ₁ frozen.
#[derive(Debug)]
pub struct Emulator {
    pub sim_sites: Vec<Site>,
    /// `beta[s][t] = sum_u B1[t, u] * alpha[s * p + u]`.
    beta: Vec<Vec<f64>>,
    /// Stage-1 covariance among simulator rows, nugget included.
    pub k_ss: DMatrix<f64>,
    /// Absolute nugget on every simulator-row diagonal entry.
    pub sim_nugget: f64,
    /// Emulator mean at the simulator sites, location-major.
    pub sim_mean: DVector<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KohModelState {
    pub data: KohData,
    pub phi1: KernelSpec,
    pub spec: ModelSpec,
    pub posterior: Vec<PosteriorSample>,
    pub prediction_grid: Vec<Vec<f64>>,
    pub design_box: Vec<(f64, f64)>,
    #[serde(skip)]
    emulator: OnceLock<Arc<Emulator>>,
}

impl PartialEq for KohModelState {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
            && self.phi1 == other.phi1
            && self.spec == other.spec
            && self.posterior == other.posterior
            && self.prediction_grid == other.prediction_grid
            && self.design_box == other.design_box
    }
}

/// Covariance between two sites for all output pairs, written into `out`
/// at `(r0 + s*p.., c0 + t*p..)`.
#[inline]
fn site_cov_into(
    phi1: &KernelSpec,
    omega: Option<&PosteriorSample>,
    a: &Site,
    b: &Site,
    p: usize,
    out: &mut DMatrix<f64>,
    r0: usize,
    c0: usize,
) {
    let k1 = phi1.eval(&a.z, &b.z);
    let k2 = match omega {
        Some(w) if a.field && b.field => w.phi2.eval(&a.x, &b.x),
        _ => 0.0,
    };
    for s in 0..p {
        for t in 0..p {
            let mut v = k1 * phi1.task_factor(s, t);
            if let (Some(w), true) = (omega, k2 != 0.0) {
                v += k2 * w.phi2.task_factor(s, t);
            }
            out[(r0 + s, c0 + t)] = v;
        }
    }
}

/// Cross covariance between two site lists (no noise).
pub fn cov_cross(phi1: &KernelSpec, omega: &PosteriorSample, a: &[Site], b: &[Site], p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.len() * p, b.len() * p);
    for (j, sb) in b.iter().enumerate() {
        for (i, sa) in a.iter().enumerate() {
            site_cov_into(phi1, Some(omega), sa, sb, p, &mut out, i * p, j * p);
        }
    }
    out
}

/// Symmetric covariance of a site list, with `sim_nugget` on simulator
/// diagonals and noise on the diagonal of
/// field-like rows.
pub fn cov_sym(phi1: &KernelSpec, omega: &PosteriorSample, a: &[Site], p: usize, sim_nugget: f64) -> DMatrix<f64> {
    let n = a.len() * p;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..a.len() {
        for i in j..a.len() {
            site_cov_into(phi1, Some(omega), &a[i], &a[j], p, &mut out, i * p, j * p);
        }
    }
    for c in 0..n {
        for r in 0..c {
            out[(r, c)] = out[(c, r)];
        }
    }
    for (i, s) in a.iter().enumerate() {
        for t in 0..p {
            out[(i * p + t, i * p + t)] += if s.field { omega.noise(t) } else { sim_nugget };
        }
    }
    out
}

fn stage1_matrix(phi1: &KernelSpec, sites: &[Site], p: usize) -> DMatrix<f64> {
    let n = sites.len() * p;
    let mut out = DMatrix::zeros(n, n);
    for j in 0..sites.len() {
        for i in j..sites.len() {
            site_cov_into(phi1, None, &sites[i], &sites[j], p, &mut out, i * p, j * p);
        }
    }
    for c in 0..n {
        for r in 0..c {
            out[(r, c)] = out[(c, r)];
        }
    }
    out
}

/// Adds `rel` times the mean diagonal to the diagonal and returns the
/// absolute amount added.
fn add_relative_nugget(m: &mut DMatrix<f64>, rel: f64) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let nugget = rel * m.diagonal().sum() / n as f64;
    for i in 0..n {
        m[(i, i)] += nugget;
    }
    nugget
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn sim_sites(data: &KohData) -> Vec<Site> {
    data.x_sim.iter().zip(&data.t_sim).map(|(x, t)| Site::sim(x, t)).collect()
}

/// Log marginal likelihood of the simulator runs under the stage-1 GP.
pub fn stage1_log_likelihood(data: &KohData, phi1: &KernelSpec, nugget: f64) -> f64 {
    let sites = sim_sites(data);
    let p = data.n_outputs();
    let mut k = stage1_matrix(phi1, &sites, p);
    add_relative_nugget(&mut k, nugget);
    match cholesky(&k, 0.0) {
        Ok(c) => {
            let y = flatten(&data.y_sim);
            mvn_logpdf_chol(&y, &vec![0.0; y.len()], &c).unwrap_or(f64::NEG_INFINITY)
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Samples the stage-1 kernel hyperparameters from simulator data alone.
pub fn fit_stage1(data: &KohData, spec: &ModelSpec, cfg: &McmcConfig) -> Result<Vec<KernelSpec>> {
    data.validate()?;
    let template = &spec.phi1_template;
    template.validate(data.design_dim() + data.calib_dim())?;
    let priors = &spec.priors.phi1;
    if priors.len() != kernel_coord_len(template) {
        return Err(Error::DimensionMismatch {
            context: "stage-1 priors",
            expected: kernel_coord_len(template),
            found: priors.len(),
        });
    }
    let init = kernel_coords(template)?;
    let scales = default_scales(priors, cfg.step_scales.as_deref());
    let logpost = |c: &[f64]| {
        let lp: f64 = priors.iter().zip(c).map(|(p, v)| p.log_density(*v)).sum();
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + stage1_log_likelihood(data, &kernel_from_coords(template, c), spec.stage1_nugget)
    };
    let run = mcmc::run(logpost, &init, &scales, cfg, tag::STAGE1)?;
    Ok(run.draws.iter().map(|c| kernel_from_coords(template, c)).collect())
}

/// Fixes φ₁ at the mean of its posterior draws, taken on the log scale.
pub fn freeze_phi1(samples: &[KernelSpec]) -> Result<KernelSpec> {
    let first = samples.first().ok_or(Error::EmptyInput("stage-1 samples"))?;
    let mut acc = vec![0.0; kernel_coord_len(first)];
    for s in samples {
        for (a, c) in acc.iter_mut().zip(kernel_coords(s)?) {
            *a += c;
        }
    }
    for a in &mut acc {
        *a /= samples.len() as f64;
    }
    Ok(kernel_from_coords(first, &acc))
}

fn default_scales(priors: &[Prior], given: Option<&[f64]>) -> Vec<f64> {
    match given {
        Some(s) if s.len() == priors.len() => s.to_vec(),
        _ => priors.iter().map(|p| 0.1 * p.width()).collect(),
    }
}

impl KohModelState {
    /// Builds a state with φ₁ already fixed and no posterior yet.
    pub fn new(
        data: KohData,
        phi1: KernelSpec,
        spec: ModelSpec,
        prediction_grid: Vec<Vec<f64>>,
        design_box: Vec<(f64, f64)>,
    ) -> Result<Self> {
        data.validate()?;
        let (d, h, p) = (data.design_dim(), data.calib_dim(), data.n_outputs());
        phi1.validate(d + h)?;
        spec.phi2_template.validate(d)?;
        if phi1.num_tasks() != p || spec.phi2_template.num_tasks() != p {
            return Err(Error::DimensionMismatch { context: "kernel task count", expected: p, found: phi1.num_tasks() });
        }
        if spec.priors.theta.len() != h {
            return Err(Error::DimensionMismatch { context: "theta priors", expected: h, found: spec.priors.theta.len() });
        }
        let noise_terms = match spec.noise {
            NoiseModel::Shared => 1,
            NoiseModel::PerTask => p,
        };
        if spec.priors.sigma2.len() != noise_terms {
            return Err(Error::DimensionMismatch {
                context: "noise priors",
                expected: noise_terms,
                found: spec.priors.sigma2.len(),
            });
        }
        if spec.priors.phi2.len() != kernel_coord_len(&spec.phi2_template) {
            return Err(Error::DimensionMismatch {
                context: "discrepancy priors",
                expected: kernel_coord_len(&spec.phi2_template),
                found: spec.priors.phi2.len(),
            });
        }
        for pr in spec.priors.theta.iter().chain(&spec.priors.phi2).chain(&spec.priors.sigma2) {
            pr.validate()?;
        }
        if let Some(x) = prediction_grid.iter().find(|x| x.len() != d) {
            return Err(Error::DimensionMismatch { context: "prediction grid", expected: d, found: x.len() });
        }
        if design_box.len() != d {
            return Err(Error::DimensionMismatch { context: "design box", expected: d, found: design_box.len() });
        }
        Ok(Self { data, phi1, spec, posterior: Vec::new(), prediction_grid, design_box, emulator: OnceLock::new() })
    }

    /// Stage-1 fit, φ₁ freeze, then the stage-2 posterior.
    pub fn fit(
        data: KohData,
        spec: ModelSpec,
        prediction_grid: Vec<Vec<f64>>,
        design_box: Vec<(f64, f64)>,
        stage1: &McmcConfig,
        stage2: &McmcConfig,
    ) -> Result<Self> {
        let phi1 = freeze_phi1(&fit_stage1(&data, &spec, stage1)?)?;
        let mut state = Self::new(data, phi1, spec, prediction_grid, design_box)?;
        state.posterior = state.fit_posterior(stage2, None)?;
        Ok(state)
    }

    pub fn n_outputs(&self) -> usize {
        self.data.n_outputs()
    }

    pub fn n_pred(&self) -> usize {
        self.prediction_grid.len() * self.n_outputs()
    }

    pub fn emulator(&self) -> Arc<Emulator> {
        self.emulator
            .get_or_init(|| Arc::new(self.build_emulator()))
            .clone()
    }

    fn build_emulator(&self) -> Emulator {
        let p = self.n_outputs();
        let sites = sim_sites(&self.data);
        let mut k = stage1_matrix(&self.phi1, &sites, p);
        let sim_nugget = add_relative_nugget(&mut k, self.spec.stage1_nugget);
        let chol = cholesky(&k, 0.0).expect("stage-1 covariance with nugget is positive definite");
        let alpha = chol.solve_vec(&DVector::from_vec(flatten(&self.data.y_sim)));
        let beta: Vec<Vec<f64>> = (0..sites.len())
            .map(|s| {
                (0..p)
                    .map(|t| (0..p).map(|u| self.phi1.task_factor(t, u) * alpha[s * p + u]).sum())
                    .collect()
            })
            .collect();
        let mut em = Emulator { sim_sites: sites, beta, k_ss: k, sim_nugget, sim_mean: DVector::zeros(0) };
        let mean: Vec<f64> = em.sim_sites.iter().flat_map(|s| em.mean_at(&self.phi1, &s.z)).collect();
        em.sim_mean = DVector::from_vec(mean);
        em
    }

    /// Mean of a site: the emulator surface for field-like sites, the
    /// configured convention for simulator sites.
    pub fn site_mean(&self, em: &Emulator, site: &Site) -> Vec<f64> {
        if site.field || self.spec.sim_mean == SimRowMean::Emulator {
            em.mean_at(&self.phi1, &site.z)
        } else {
            vec![0.0; self.n_outputs()]
        }
    }

    pub fn field_sites(&self, omega: &PosteriorSample) -> Vec<Site> {
        self.data.x_field.iter().map(|x| Site::field(x, &omega.theta)).collect()
    }

    pub fn pred_sites(&self, omega: &PosteriorSample) -> Vec<Site> {
        self.prediction_grid.iter().map(|x| Site::field(x, &omega.theta)).collect()
    }

    /// Observed sites (field then simulator) and their stacked responses.
    pub fn observed(&self, omega: &PosteriorSample) -> (Vec<Site>, DVector<f64>) {
        let em = self.emulator();
        let mut sites = self.field_sites(omega);
        sites.extend(em.sim_sites.iter().cloned());
        let mut y = flatten(&self.data.y_field);
        y.extend(flatten(&self.data.y_sim));
        (sites, DVector::from_vec(y))
    }

    pub fn mean_vector(&self, em: &Emulator, sites: &[Site]) -> DVector<f64> {
        DVector::from_vec(sites.iter().flat_map(|s| self.site_mean(em, s)).collect())
    }

    /// Symmetric covariance of observation sites, reusing the cached
    /// simulator block when the trailing sites are the simulator runs.
    pub fn cov_obs(&self, omega: &PosteriorSample, sites: &[Site]) -> DMatrix<f64> {
        let p = self.n_outputs();
        let em = self.emulator();
        let m = em.sim_sites.len();
        let nf = sites.len().saturating_sub(m);
        if sites.len() < m || sites[nf..] != em.sim_sites[..] {
            return cov_sym(&self.phi1, omega, sites, p, em.sim_nugget);
        }
        let n = sites.len() * p;
        let mut out = DMatrix::zeros(n, n);
        let head = cov_sym(&self.phi1, omega, &sites[..nf], p, em.sim_nugget);
        out.view_mut((0, 0), (nf * p, nf * p)).copy_from(&head);
        let cross = cov_cross(&self.phi1, omega, &sites[..nf], &sites[nf..], p);
        out.view_mut((0, nf * p), (nf * p, m * p)).copy_from(&cross);
        out.view_mut((nf * p, 0), (m * p, nf * p)).copy_from(&cross.transpose());
        out.view_mut((nf * p, nf * p), (m * p, m * p)).copy_from(&em.k_ss);
        out
    }

    pub fn assemble_blocks(&self, omega: &PosteriorSample, extra_field_points: &[Vec<f64>]) -> Result<BlockCovariance> {
        let d = self.data.design_dim();
        if let Some(x) = extra_field_points.iter().find(|x| x.len() != d) {
            return Err(Error::DimensionMismatch { context: "extra field point", expected: d, found: x.len() });
        }
        let p = self.n_outputs();
        let em = self.emulator();
        let mut sites = self.field_sites(omega);
        sites.extend(extra_field_points.iter().map(|x| Site::field(x, &omega.theta)));
        sites.extend(em.sim_sites.iter().cloned());
        let pred = self.pred_sites(omega);
        Ok(BlockCovariance {
            sigma_oo: self.cov_obs(omega, &sites),
            sigma_star_o: cov_cross(&self.phi1, omega, &pred, &sites, p),
            sigma_star_star: cov_sym(&self.phi1, omega, &pred, p, 0.0),
            mean_o: self.mean_vector(&em, &sites),
            mean_star: self.mean_vector(&em, &pred),
            obs_sites: sites,
        })
    }

    pub fn log_likelihood(&self, omega: &PosteriorSample) -> f64 {
        let (sites, y) = self.observed(omega);
        let em = self.emulator();
        let mu = self.mean_vector(&em, &sites);
        let cov = self.cov_obs(omega, &sites);
        match cholesky(&cov, 0.0) {
            Ok(c) => mvn_logpdf_chol(y.as_slice(), mu.as_slice(), &c).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    /// Predictive distribution on the prediction grid.
    ///
    /// Extra points with observations enter both mean and covariance. Extra
    /// points without observations only tighten the covariance; the mean is
    /// unaffected because conditioning on a value equal to its own predicted
    /// mean leaves every other conditional mean unchanged.
    pub fn predict(&self, omega: &PosteriorSample, extra: &[ExtraPoint]) -> Result<PredictiveGaussian> {
        let p = self.n_outputs();
        let em = self.emulator();
        let (mut obs_sites, y) = self.observed(omega);
        let nf = self.data.n_field();
        let mut y_obs: Vec<f64> = y.iter().copied().collect();
        let mut pending = Vec::new();
        let mut observed_extra = Vec::new();
        for e in extra {
            match &e.y {
                Some(v) => {
                    if v.len() != p {
                        return Err(Error::DimensionMismatch { context: "extra observation", expected: p, found: v.len() });
                    }
                    observed_extra.push((Site::field(&e.x, &omega.theta), v.clone()));
                }
                None => pending.push(Site::field(&e.x, &omega.theta)),
            }
        }
        for (k, (s, v)) in observed_extra.into_iter().enumerate() {
            obs_sites.insert(nf + k, s);
            for (t, val) in v.into_iter().enumerate() {
                y_obs.insert((nf + k) * p + t, val);
            }
        }
        let pred = self.pred_sites(omega);
        let mu_o = self.mean_vector(&em, &obs_sites);
        let mu_star = self.mean_vector(&em, &pred);
        let cov_oo = self.cov_obs(omega, &obs_sites);
        let chol = cholesky(&cov_oo, 0.0)?;
        let k_so = cov_cross(&self.phi1, omega, &pred, &obs_sites, p);
        let resid = DVector::from_vec(y_obs) - mu_o;
        let mean = mu_star + &k_so * chol.solve_vec(&resid);

        let (chol_all, k_all) = if pending.is_empty() {
            (chol, k_so)
        } else {
            let mut all = pending;
            all.extend(obs_sites);
            let cov_all = self.cov_obs(omega, &all);
            (cholesky(&cov_all, 0.0)?, cov_cross(&self.phi1, omega, &pred, &all, p))
        };
        let w = chol_all.whiten_mat(&k_all.transpose());
        let mut cov = cov_sym(&self.phi1, omega, &pred, p, 0.0) - w.transpose() * w;
        symmetrize(&mut cov);
        Ok(PredictiveGaussian { mean, cov: SpdMatrix::new(cov)? })
    }

    /// Unconstrained coordinates of a posterior sample:
    /// `[θ | φ₂ coords | log σ²]`.
    pub fn sample_coords(&self, s: &PosteriorSample) -> Result<Vec<f64>> {
        let mut c = s.theta.clone();
        c.extend(kernel_coords(&s.phi2)?);
        c.extend(s.sigma2.iter().map(|v| v.ln()));
        Ok(c)
    }

    pub fn sample_from_coords(&self, c: &[f64]) -> PosteriorSample {
        let h = self.data.calib_dim();
        let k = kernel_coord_len(&self.spec.phi2_template);
        PosteriorSample {
            theta: c[..h].to_vec(),
            phi2: kernel_from_coords(&self.spec.phi2_template, &c[h..h + k]),
            sigma2: c[h + k..].iter().map(|v| v.exp()).collect(),
        }
    }

    fn coord_priors(&self) -> Vec<Prior> {
        let pr = &self.spec.priors;
        pr.theta.iter().chain(&pr.phi2).chain(&pr.sigma2).copied().collect()
    }

    pub fn log_posterior_coords(&self, c: &[f64]) -> f64 {
        let lp: f64 = self.coord_priors().iter().zip(c).map(|(p, v)| p.log_density(*v)).sum();
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.log_likelihood(&self.sample_from_coords(c))
    }

    /// Stage-2 posterior draws. `warm` supplies a starting point and a
    /// multiplier applied to the default step sizes.
    pub fn fit_posterior(&self, cfg: &McmcConfig, warm: Option<(&[f64], f64)>) -> Result<Vec<PosteriorSample>> {
        let priors = self.coord_priors();
        let mut scales = default_scales(&priors, cfg.step_scales.as_deref());
        let init = match warm {
            Some((start, factor)) => {
                for s in &mut scales {
                    *s *= factor;
                }
                start.to_vec()
            }
            None => {
                let mut c: Vec<f64> = self.spec.priors.theta.iter().map(Prior::center).collect();
                c.extend(kernel_coords(&self.spec.phi2_template)?);
                c.extend(self.spec.priors.sigma2.iter().map(Prior::center));
                c
            }
        };
        let run = mcmc::run(|c| self.log_posterior_coords(c), &init, &scales, cfg, tag::STAGE2)?;
        Ok(run.draws.iter().map(|c| self.sample_from_coords(c)).collect())
    }

    /// Componentwise posterior mean of the unconstrained coordinates.
    pub fn posterior_mean_coords(&self) -> Result<Vec<f64>> {
        let first = self.posterior.first().ok_or(Error::EmptyInput("posterior"))?;
        let mut acc = vec![0.0; self.sample_coords(first)?.len()];
        for s in &self.posterior {
            for (a, c) in acc.iter_mut().zip(self.sample_coords(s)?) {
                *a += c;
            }
        }
        let j = self.posterior.len() as f64;
        Ok(acc.into_iter().map(|a| a / j).collect())
    }

    /// Returns a new state with one more field observation and a refitted
    /// posterior, warm-started at the previous posterior mean with halved
    /// proposal steps.
    pub fn append_observation(&self, xi: &[f64], y_new: &[f64], cfg: &McmcConfig) -> Result<Self> {
        if xi.len() != self.data.design_dim() {
            return Err(Error::DimensionMismatch { context: "appended point", expected: self.data.design_dim(), found: xi.len() });
        }
        if y_new.len() != self.n_outputs() || y_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::DomainViolation(format!("invalid observation {y_new:?}")));
        }
        let mut next = self.clone();
        next.data.x_field.push(xi.to_vec());
        next.data.y_field.push(y_new.to_vec());
        let warm = if self.posterior.is_empty() { None } else { Some(self.posterior_mean_coords()?) };
        next.posterior = next.fit_posterior(cfg, warm.as_deref().map(|w| (w, 0.5)))?;
        Ok(next)
    }

    /// One predictive component per posterior sample, equal weights.
    pub fn predictive_mixture(&self, extra: &[ExtraPoint]) -> Result<crate::gmm::GaussianMixture> {
        if self.posterior.is_empty() {
            return Err(Error::EmptyInput("posterior"));
        }
        let comps: Vec<PredictiveGaussian> = self
            .posterior
            .par_iter()
            .map(|s| self.predict(s, extra))
            .collect::<Result<_>>()?;
        let w = 1.0 / comps.len() as f64;
        crate::gmm::GaussianMixture::new(
            comps.into_iter().map(|c| (w, c.mean, c.cov.entries)).collect(),
        )
    }
}

impl Emulator {
    /// Stage-1 posterior mean at joint input `z`, one value per output.
    pub fn mean_at(&self, phi1: &KernelSpec, z: &[f64]) -> Vec<f64> {
        let p = self.beta.first().map_or(1, Vec::len);
        let mut out = vec![0.0; p];
        for (s, site) in self.sim_sites.iter().enumerate() {
            let k = phi1.eval(z, &site.z);
            for t in 0..p {
                out[t] += k * self.beta[s][t];
            }
        }
        out
    }
}

/// Shared helper for callers that hold a factor of an observation block.
pub fn solve_residual(chol: &CholFactor, y: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    chol.solve_vec(&(y - mu))
}
