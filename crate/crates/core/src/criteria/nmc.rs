//! Nested Monte Carlo estimation of the mutual information between the
//! prediction vector y* and the response at a candidate.
//!
//! Each mixture component stores the y* marginal plus, per candidate, the
//! candidate mean, the y*-by-candidate cross covariance and the candidate
//! covariance. Outer draws use common random numbers across candidates: the
//! y* draw is shared and the candidate draw reuses the same standard normals,
//! so score differences between candidates carry little sampling noise.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{compress_detailed, Component, CompressionConfig, CompressionStats, GaussianMixture};
use crate::linalg::{cholesky, triangular_solve, CholFactor, LN_2PI};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmcConfig {
    pub outer_s: usize,
    pub density_floor_tau: f64,
    pub seed: u64,
}

impl Default for NmcConfig {
    fn default() -> Self {
        Self { outer_s: 10_000, density_floor_tau: 1e-300, seed: 0 }
    }
}

impl NmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_s == 0 {
            return Err(Error::InvalidConfig("outer_s must be positive".into()));
        }
        if !(self.density_floor_tau > 0.0) {
            return Err(Error::InvalidConfig("density_floor_tau must be positive".into()));
        }
        Ok(())
    }
}

/// Joint moments of the prediction vector and one candidate response.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateBlock {
    pub mean: DVector<f64>,
    /// Covariance between y* (rows) and the candidate response (columns).
    pub cross: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub blocks: Vec<CandidateBlock>,
}

impl JointComponent {
    /// Splits a Gaussian over `(y*, y_new)` after the first `split` coordinates.
    pub fn from_joint(weight: f64, mean: &DVector<f64>, cov: &DMatrix<f64>, split: usize) -> Self {
        let d = mean.len();
        let q = d - split;
        JointComponent {
            weight,
            mean: mean.rows(0, split).into_owned(),
            cov: cov.view((0, 0), (split, split)).into_owned(),
            blocks: vec![CandidateBlock {
                mean: mean.rows(split, q).into_owned(),
                cross: cov.view((0, split), (split, q)).into_owned(),
                cov: cov.view((split, split), (q, q)).into_owned(),
            }],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    pub std_error: f64,
}

struct PreparedBlock {
    mean: DVector<f64>,
    cond: CholFactor,
    marg: CholFactor,
}

struct Prepared {
    log_w: f64,
    mean: DVector<f64>,
    chol: CholFactor,
    linv: DMatrix<f64>,
    /// `L⁻¹ · cross` for all candidates side by side (d × M·q).
    w_all: DMatrix<f64>,
    blocks: Vec<PreparedBlock>,
}

/// Mixture ready for repeated density evaluation.
pub struct PreparedMixture {
    comps: Vec<Prepared>,
    pub dim: usize,
    pub q: usize,
    pub n_candidates: usize,
}

/// Outer draws shared by every candidate.
#[derive(Clone, Debug)]
pub struct OuterSamples {
    /// d × S.
    pub y_star: DMatrix<f64>,
    /// One q × S matrix per candidate.
    pub y_new: Vec<DMatrix<f64>>,
}

impl OuterSamples {
    pub fn len(&self) -> usize {
        self.y_star.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y_star.ncols() == 0
    }
}

fn gaussian_logpdf_chol(r: &[f64], chol: &CholFactor, scratch: &mut [f64]) -> f64 {
    let l = &chol.l;
    let q = r.len();
    if q == 1 {
        let z = r[0] / l[(0, 0)];
        return -0.5 * (z * z + LN_2PI) - l[(0, 0)].ln();
    }
    let mut quad = 0.0;
    for i in 0..q {
        let mut s = r[i];
        for k in 0..i {
            s -= l[(i, k)] * scratch[k];
        }
        scratch[i] = s / l[(i, i)];
        quad += scratch[i] * scratch[i];
    }
    -0.5 * (quad + q as f64 * LN_2PI + chol.logdet())
}

/// Running log-sum-exp with one `exp` per update.
#[derive(Clone)]
struct Lse {
    max: Vec<f64>,
    sum: Vec<f64>,
}

impl Lse {
    fn new(n: usize) -> Self {
        Self { max: vec![f64::NEG_INFINITY; n], sum: vec![0.0; n] }
    }

    #[inline]
    fn push(&mut self, i: usize, x: f64) {
        let m = self.max[i];
        if x <= m {
            self.sum[i] += (x - m).exp();
        } else {
            self.sum[i] = if m == f64::NEG_INFINITY { 1.0 } else { self.sum[i] * (m - x).exp() + 1.0 };
            self.max[i] = x;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for i in 0..self.max.len() {
            let (a, b) = (self.max[i], other.max[i]);
            if b == f64::NEG_INFINITY {
                continue;
            }
            if a == f64::NEG_INFINITY {
                self.max[i] = b;
                self.sum[i] = other.sum[i];
            } else if a >= b {
                self.sum[i] += other.sum[i] * (b - a).exp();
            } else {
                self.sum[i] = self.sum[i] * (a - b).exp() + other.sum[i];
                self.max[i] = b;
            }
        }
        self
    }

    fn value(&self, i: usize) -> f64 {
        self.max[i] + self.sum[i].ln()
    }
}

struct Accumulator {
    star: Lse,
    joint: Vec<Lse>,
    new: Vec<Lse>,
}

impl Accumulator {
    fn new(s: usize, m: usize) -> Self {
        Self { star: Lse::new(s), joint: vec![Lse::new(s); m], new: vec![Lse::new(s); m] }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            star: self.star.merge(o.star),
            joint: self.joint.into_iter().zip(o.joint).map(|(a, b)| a.merge(b)).collect(),
            new: self.new.into_iter().zip(o.new).map(|(a, b)| a.merge(b)).collect(),
        }
    }
}

impl PreparedMixture {
    pub fn new(components: &[JointComponent]) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptyInput("joint mixture"))?;
        let dim = first.mean.len();
        let m = first.blocks.len();
        let q = first.blocks.first().map_or(0, |b| b.mean.len());
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::DomainViolation(format!("mixture weights sum to {total}")));
        }
        for c in components {
            if c.mean.len() != dim || c.blocks.len() != m {
                return Err(Error::DimensionMismatch { context: "joint component", expected: dim, found: c.mean.len() });
            }
        }
        let comps = components
            .par_iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| prepare(c, dim, q))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { comps, dim, q, n_candidates: m })
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    /// Draws `s` outer samples: component by weight, then a joint Gaussian draw.
    pub fn draw_outer<R: Rng>(&self, s: usize, rng: &mut R) -> Result<OuterSamples> {
        let weights: Vec<f64> = self.comps.iter().map(|c| c.log_w.exp()).collect();
        let pick = WeightedIndex::new(&weights).map_err(|e| Error::DomainViolation(e.to_string()))?;
        let (d, q, m) = (self.dim, self.q, self.n_candidates);
        let ks: Vec<usize> = (0..s).map(|_| pick.sample(rng)).collect();
        let z = DMatrix::from_fn(d, s, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z2 = DMatrix::from_fn(q, s, |_, _| rng.sample::<f64, _>(StandardNormal));

        let mut y_star = DMatrix::zeros(d, s);
        let mut y_new = vec![DMatrix::zeros(q, s); m];
        let mut by_comp: Vec<Vec<usize>> = vec![Vec::new(); self.comps.len()];
        for (i, &k) in ks.iter().enumerate() {
            by_comp[k].push(i);
        }
        for (k, idx) in by_comp.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let c = &self.comps[k];
            let zk = DMatrix::from_fn(d, idx.len(), |r, j| z[(r, idx[j])]);
            let ys = &c.chol.l * &zk;
            let proj = c.w_all.tr_mul(&zk);
            for (j, &i) in idx.iter().enumerate() {
                for r in 0..d {
                    y_star[(r, i)] = ys[(r, j)] + c.mean[r];
                }
                for (b, blk) in c.blocks.iter().enumerate() {
                    for r in 0..q {
                        let mut v = blk.mean[r] + proj[(b * q + r, j)];
                        for t in 0..=r {
                            v += blk.cond.l[(r, t)] * z2[(t, i)];
                        }
                        y_new[b][(r, i)] = v;
                    }
                }
            }
        }
        Ok(OuterSamples { y_star, y_new })
    }

    /// NMC estimate per candidate from fixed outer draws.
    pub fn evaluate(&self, outer: &OuterSamples, tau: f64) -> Result<Vec<MiEstimate>> {
        let (d, q, m) = (self.dim, self.q, self.n_candidates);
        let s = outer.len();
        if outer.y_star.nrows() != d || outer.y_new.len() != m {
            return Err(Error::DimensionMismatch { context: "outer samples", expected: d, found: outer.y_star.nrows() });
        }
        let half_d = 0.5 * d as f64 * LN_2PI;
        let acc = self
            .comps
            .par_iter()
            .fold(
                || Accumulator::new(s, m),
                |mut acc, c| {
                    let mut r = outer.y_star.clone();
                    for mut col in r.column_iter_mut() {
                        col -= &c.mean;
                    }
                    let r = &c.linv * r;
                    let base = c.log_w - half_d - 0.5 * c.chol.logdet();
                    let lstar: Vec<f64> = r.column_iter().map(|col| base - 0.5 * col.norm_squared()).collect();
                    for (i, &v) in lstar.iter().enumerate() {
                        acc.star.push(i, v);
                    }
                    let proj = c.w_all.tr_mul(&r);
                    let mut buf = vec![0.0; q];
                    let mut buf2 = vec![0.0; q];
                    let mut scratch = vec![0.0; q];
                    for (b, blk) in c.blocks.iter().enumerate() {
                        let yn = &outer.y_new[b];
                        for i in 0..s {
                            for t in 0..q {
                                let dev = yn[(t, i)] - blk.mean[t];
                                buf2[t] = dev;
                                buf[t] = dev - proj[(b * q + t, i)];
                            }
                            acc.joint[b].push(i, lstar[i] + gaussian_logpdf_chol(&buf, &blk.cond, &mut scratch));
                            acc.new[b].push(i, c.log_w + gaussian_logpdf_chol(&buf2, &blk.marg, &mut scratch));
                        }
                    }
                    acc
                },
            )
            .reduce(|| Accumulator::new(s, m), Accumulator::merge);

        let floor = tau.ln();
        let star: Vec<f64> = (0..s).map(|i| acc.star.value(i).max(floor)).collect();
        (0..m)
            .map(|b| {
                let terms: Vec<f64> = (0..s)
                    .map(|i| acc.joint[b].value(i).max(floor) - star[i] - acc.new[b].value(i).max(floor))
                    .collect();
                if terms.iter().any(|t| !t.is_finite()) {
                    return Err(Error::NumericalFailure { context: "mixture density".into(), candidate: Some(b) });
                }
                Ok(mean_and_se(&terms))
            })
            .collect()
    }
}

fn mean_and_se(xs: &[f64]) -> MiEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    MiEstimate { value: mean, std_error: (var / n).sqrt() }
}

fn prepare(c: &JointComponent, d: usize, q: usize) -> Result<Prepared> {
    let chol = cholesky(&c.cov, 0.0)?;
    let linv = triangular_solve(&chol.l, &DMatrix::identity(d, d))?;
    let m = c.blocks.len();
    let mut cross_all = DMatrix::zeros(d, m * q);
    for (b, blk) in c.blocks.iter().enumerate() {
        if blk.cross.shape() != (d, q) || blk.cov.shape() != (q, q) || blk.mean.len() != q {
            return Err(Error::DimensionMismatch { context: "candidate block", expected: q, found: blk.mean.len() });
        }
        cross_all.view_mut((0, b * q), (d, q)).copy_from(&blk.cross);
    }
    let w_all = &linv * cross_all;
    let blocks = c
        .blocks
        .iter()
        .enumerate()
        .map(|(b, blk)| {
            let w = w_all.view((0, b * q), (d, q));
            let cond = blk.cov.clone() - w.tr_mul(&w);
            let fail = |_| Error::NumericalFailure { context: "conditional candidate covariance".into(), candidate: Some(b) };
            Ok(PreparedBlock { mean: blk.mean.clone(), cond: cholesky(&cond, 0.0).map_err(fail)?, marg: cholesky(&blk.cov, 0.0).map_err(fail)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { log_w: c.weight.ln(), mean: c.mean.clone(), chol, linv, w_all, blocks })
}

/// Scores every candidate of the mixture.
pub fn mi_scores(components: &[JointComponent], nmc: &NmcConfig) -> Result<Vec<MiEstimate>> {
    nmc.validate()?;
    let prepared = PreparedMixture::new(components)?;
    let mut rng = crate::rng::stream(nmc.seed, &[crate::rng::tag::NMC]);
    let outer = prepared.draw_outer(nmc.outer_s, &mut rng)?;
    prepared.evaluate(&outer, nmc.density_floor_tau)
}

/// As [`mi_scores`] with outer draws from `outer` and mixture densities
/// from `inner`, typically a compressed approximation of `outer`. Both share
/// the outer stream, so `inner == outer` reproduces [`mi_scores`].
pub fn mi_scores_split(outer: &[JointComponent], inner: &[JointComponent], nmc: &NmcConfig) -> Result<Vec<MiEstimate>> {
    nmc.validate()?;
    let draws = {
        let sampler = PreparedMixture::new(outer)?;
        let mut rng = crate::rng::stream(nmc.seed, &[crate::rng::tag::NMC]);
        sampler.draw_outer(nmc.outer_s, &mut rng)?
    };
    let density = PreparedMixture::new(inner)?;
    if density.q != draws.y_new.first().map_or(0, |y| y.nrows()) {
        return Err(Error::DimensionMismatch { context: "candidate response", expected: density.q, found: draws.y_new[0].nrows() });
    }
    density.evaluate(&draws, nmc.density_floor_tau)
}

/// MI estimate for a mixture over the stacked vector `(y*, y_new)`, with y*
/// the first `split` coordinates.
pub fn mi_nmc(joint: &GaussianMixture, split: usize, nmc: &NmcConfig) -> Result<MiEstimate> {
    if split == 0 || split >= joint.dim {
        return Err(Error::DimensionMismatch { context: "mi split", expected: joint.dim - 1, found: split });
    }
    let comps: Vec<JointComponent> = joint
        .components
        .iter()
        .map(|c| JointComponent::from_joint(c.weight, &c.mean, &c.cov, split))
        .collect();
    Ok(mi_scores(&comps, nmc)?[0])
}

fn logpdf(x: &[f64], mean: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    crate::linalg::mvn_logpdf_chol(x, mean, &cholesky(cov, 0.0)?)
}

/// The textbook nested estimator: every outer draw comes from a fresh
/// component and is scored against `j` freshly drawn inner components.
pub fn nmc_fresh_inner<R: Rng, F>(split: usize, mut draw: F, s: usize, j: usize, tau: f64, rng: &mut R) -> Result<MiEstimate>
where
    F: FnMut(&mut R) -> (DVector<f64>, DMatrix<f64>),
{
    let floor = tau.ln();
    let mut terms = Vec::with_capacity(s);
    let mut lj = Vec::with_capacity(j);
    let mut la = Vec::with_capacity(j);
    let mut lb = Vec::with_capacity(j);
    for _ in 0..s {
        let (mu0, cov0) = draw(rng);
        let d = mu0.len();
        let l0 = cholesky(&cov0, 0.0)?;
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &l0.l * z + mu0;
        let (ya, yb) = (y.rows(0, split).into_owned(), y.rows(split, d - split).into_owned());
        lj.clear();
        la.clear();
        lb.clear();
        for _ in 0..j {
            let (mu, cov) = draw(rng);
            let q = d - split;
            lj.push(logpdf(y.as_slice(), mu.as_slice(), &cov)?);
            la.push(logpdf(
                ya.as_slice(),
                mu.rows(0, split).as_slice(),
                &cov.view((0, 0), (split, split)).into_owned(),
            )?);
            lb.push(logpdf(
                yb.as_slice(),
                mu.rows(split, q).as_slice(),
                &cov.view((split, split), (q, q)).into_owned(),
            )?);
        }
        let lnj = (j as f64).ln();
        let f = |v: &[f64]| (crate::gmm::log_sum_exp(v) - lnj).max(floor);
        terms.push(f(&lj) - f(&la) - f(&lb));
    }
    Ok(mean_and_se(&terms))
}

/// Compresses the y* marginal and rebuilds every candidate block by moment
/// matching over each output group.
pub fn compress_joint(components: &[JointComponent], cfg: &CompressionConfig) -> Result<(Vec<JointComponent>, CompressionStats)> {
    let marg = GaussianMixture {
        dim: components.first().ok_or(Error::EmptyInput("joint mixture"))?.mean.len(),
        components: components
            .iter()
            .map(|c| Component { weight: c.weight, mean: c.mean.clone(), cov: c.cov.clone() })
            .collect(),
    };
    let out = compress_detailed(&marg, cfg, |_| {})?;
    let merged = out
        .groups
        .par_iter()
        .zip(out.mixture.components.par_iter())
        .map(|(group, target)| group_moments(components, group, target))
        .collect();
    Ok((merged, out.stats))
}

fn group_moments(all: &[JointComponent], group: &[usize], target: &Component) -> JointComponent {
    let total: f64 = group.iter().map(|&j| all[j].weight).sum();
    let m = all[group[0]].blocks.len();
    let blocks = (0..m)
        .map(|b| {
            let mut mean = DVector::zeros(all[group[0]].blocks[b].mean.len());
            for &j in group {
                mean.axpy(all[j].weight / total, &all[j].blocks[b].mean, 1.0);
            }
            let mut cross = DMatrix::zeros(target.mean.len(), mean.len());
            let mut cov = DMatrix::zeros(mean.len(), mean.len());
            for &j in group {
                let w = all[j].weight / total;
                let blk = &all[j].blocks[b];
                let dn = &blk.mean - &mean;
                let ds = &all[j].mean - &target.mean;
                cross += (&blk.cross + &ds * dn.transpose()) * w;
                cov += (&blk.cov + &dn * dn.transpose()) * w;
            }
            CandidateBlock { mean, cross, cov }
        })
        .collect();
    JointComponent { weight: target.weight, mean: target.mean.clone(), cov: target.cov.clone(), blocks }
}
