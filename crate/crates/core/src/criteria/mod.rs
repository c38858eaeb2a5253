//! Design criteria: Bayesian IMSPE, Bayesian D-optimality, maximin distance,
//! nested Monte Carlo mutual information, local complexity and the two
//! hybrids that blend an uncertainty criterion with complexity.

mod fim;
pub mod nmc;
pub mod theory;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fast_update::{PrecomputedCovariance, UpdateContext};

pub(crate) use fim::thin;
pub use fim::{d_optimality, fisher_information, fisher_information_with, FimConfig};
pub use nmc::{
    compress_joint, mi_nmc, mi_scores, mi_scores_split, nmc_fresh_inner, CandidateBlock, JointComponent, MiEstimate, NmcConfig,
    OuterSamples, PreparedMixture,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    #[serde(rename = "mi")]
    Mi,
    #[serde(rename = "mi+cx")]
    MiCx,
    #[serde(rename = "imspe")]
    Imspe,
    #[serde(rename = "imspe+cx")]
    ImspeCx,
    #[serde(rename = "dopt")]
    Dopt,
    #[serde(rename = "maximin")]
    Maximin,
}

impl Criterion {
    pub const ALL: [Criterion; 6] =
        [Criterion::Mi, Criterion::MiCx, Criterion::Imspe, Criterion::ImspeCx, Criterion::Dopt, Criterion::Maximin];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Mi => "mi",
            Criterion::MiCx => "mi+cx",
            Criterion::Imspe => "imspe",
            Criterion::ImspeCx => "imspe+cx",
            Criterion::Dopt => "dopt",
            Criterion::Maximin => "maximin",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Criterion::Imspe | Criterion::ImspeCx => Direction::Minimize,
            _ => Direction::Maximize,
        }
    }

    pub fn uses_complexity(self) -> bool {
        matches!(self, Criterion::MiCx | Criterion::ImspeCx)
    }

    pub fn is_mi(self) -> bool {
        matches!(self, Criterion::Mi | Criterion::MiCx)
    }

    pub fn is_imspe(self) -> bool {
        matches!(self, Criterion::Imspe | Criterion::ImspeCx)
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown criterion `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_index: usize,
    /// MI estimate, IMSPE, log det FIM or minimum distance.
    pub raw: f64,
    pub complexity: Option<f64>,
    pub hybrid: Option<f64>,
    pub direction: Direction,
}

impl CandidateScore {
    /// Value used for selection and the direction it is optimized in.
    pub fn decisive(&self) -> (f64, Direction) {
        match self.hybrid {
            Some(h) => (h, Direction::Maximize),
            None => (self.raw, self.direction),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexityConfig {
    pub w_g: f64,
    pub w_s: f64,
    pub k_neighbors: usize,
    /// Finite-difference step as a fraction of each design-box width.
    pub fd_step: f64,
    pub alpha: f64,
    /// Min-max normalize the raw criterion before blending.
    pub normalize_raw: bool,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self { w_g: 0.5, w_s: 0.5, k_neighbors: 5, fd_step: 1e-4, alpha: 0.5, normalize_raw: true }
    }
}

impl ComplexityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_g) || self.w_g + self.w_s != 1.0 {
            return Err(Error::InvalidConfig(format!("w_g = {} and w_s = {} must be weights summing to 1", self.w_g, self.w_s)));
        }
        if self.k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be positive".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidConfig("fd_step must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }

    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }
}

/// Bayesian IMSPE after adding `candidate`: the weighted average over
/// posterior samples of `tr(Σ*)/n*`.
pub fn imspe(candidate: usize, samples: &[(f64, &PrecomputedCovariance, &UpdateContext)]) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 0.0;
    for (w, pre, ctx) in samples {
        let n_star = ctx.sigma_star.nrows() as f64;
        total += w * ctx.trace_with_fallback(pre, candidate)? / n_star;
        weight += w;
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("posterior samples"));
    }
    Ok(total / weight)
}

/// Average of `tr(Σ)/n` over equally weighted covariances.
pub fn imspe_from_covariances(covs: &[nalgebra::DMatrix<f64>]) -> f64 {
    covs.iter().map(|c| c.trace() / c.nrows() as f64).sum::<f64>() / covs.len() as f64
}

/// Minimum Euclidean distance to the selected points, `+∞` when none.
pub fn maximin(candidate: &[f64], selected: &[Vec<f64>]) -> f64 {
    selected
        .iter()
        .map(|s| s.iter().zip(candidate).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

/// Frobenius norm of the finite-difference Jacobian of `mean_fn` at `x`.
/// Central differences inside the box, one-sided at its edges.
pub fn local_slope<F>(x: &[f64], mean_fn: F, design_box: &[(f64, f64)], fd_step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut sq = 0.0;
    let mut probe = x.to_vec();
    for (i, &(lo, hi)) in design_box.iter().enumerate() {
        let h = fd_step * (hi - lo);
        if !(h > 0.0) || x[i] + h == x[i] {
            return Err(Error::DerivativeFailure { param: i });
        }
        let (a, b) = (if x[i] - h < lo { x[i] } else { x[i] - h }, if x[i] + h > hi { x[i] } else { x[i] + h });
        probe[i] = b;
        let fb = mean_fn(&probe);
        probe[i] = a;
        let fa = mean_fn(&probe);
        probe[i] = x[i];
        for (u, v) in fb.iter().zip(&fa) {
            let d = (u - v) / (b - a);
            if !d.is_finite() {
                return Err(Error::DerivativeFailure { param: i });
            }
            sq += d * d;
        }
    }
    Ok(sq.sqrt())
}

/// Indices of the `k` nearest other candidates, ties toward lower index.
pub fn nearest_neighbors(points: &[Vec<f64>], index: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != index)
        .map(|(j, p)| (p.iter().zip(&points[index]).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), j))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Mean absolute slope difference to the `k` nearest candidates; uses all
/// other candidates when fewer than `k` exist.
pub fn slope_change(slopes: &[f64], points: &[Vec<f64>], index: usize, k: usize) -> f64 {
    let nb = nearest_neighbors(points, index, k);
    if nb.is_empty() {
        return 0.0;
    }
    nb.iter().map(|&j| (slopes[index] - slopes[j]).abs()).sum::<f64>() / nb.len() as f64
}

/// Min-max normalization to [0, 1]; a constant vector maps to zeros.
pub fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !(hi - lo).is_finite() {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

pub fn composite_complexity(g: &[f64], s: &[f64], cfg: &ComplexityConfig) -> Result<Vec<f64>> {
    if g.len() != s.len() {
        return Err(Error::DimensionMismatch { context: "complexity components", expected: g.len(), found: s.len() });
    }
    let (gn, sn) = (min_max(g), min_max(s));
    Ok(gn.iter().zip(&sn).map(|(a, b)| cfg.w_g * a + cfg.w_s * b).collect())
}

/// `(1−α)·raw' + α·C`, where `raw'` is sign-flipped for minimized criteria
/// and optionally min-max normalized.
pub fn hybrid(raw: &[f64], complexity: &[f64], alpha: f64, direction: Direction, normalize_raw: bool) -> Vec<f64> {
    let signed: Vec<f64> = match direction {
        Direction::Maximize => raw.to_vec(),
        Direction::Minimize => raw.iter().map(|r| -r).collect(),
    };
    let base = if normalize_raw { min_max(&signed) } else { signed };
    base.iter().zip(complexity).map(|(r, c)| (1.0 - alpha) * r + alpha * c).collect()
}

/// Winning candidate; ties go to the lowest candidate index. NaN scores are
/// skipped and `−∞` (after orienting to maximization) never wins.
pub fn select_best(scores: &[CandidateScore]) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for s in scores {
        let (v, dir) = s.decisive();
        let key = if dir == Direction::Maximize { v } else { -v };
        if key.is_nan() || key == f64::NEG_INFINITY {
            continue;
        }
        let better = match best {
            None => true,
            Some((b, i)) => key > b || (key == b && s.candidate_index < i),
        };
        if better {
            best = Some((key, s.candidate_index));
        }
    }
    best.map(|(_, i)| i).ok_or(Error::SelectionFailure { count: scores.len() })
}

/// Complexity scores for every candidate from per-candidate slopes.
pub fn complexity_scores(slopes: &[f64], points: &[Vec<f64>], cfg: &ComplexityConfig) -> Result<Vec<f64>> {
    let s: Vec<f64> = (0..points.len()).map(|i| slope_change(slopes, points, i, cfg.k_neighbors)).collect();
    composite_complexity(slopes, &s, cfg)
}

/// Fills complexity and hybrid columns of a raw score table.
pub fn attach_hybrid(scores: &mut [CandidateScore], complexity: &[f64], cfg: &ComplexityConfig) {
    let raw: Vec<f64> = scores.iter().map(|s| s.raw).collect();
    let dir = scores.first().map_or(Direction::Maximize, |s| s.direction);
    let h = hybrid(&raw, complexity, cfg.alpha, dir, cfg.normalize_raw);
    for (i, s) in scores.iter_mut().enumerate() {
        s.complexity = Some(complexity[i]);
        s.hybrid = (cfg.alpha > 0.0).then_some(h[i]);
    }
}
