use rayon::prelude::*;

use super::cache::{MeanSurface, SampleCache};
use super::CampaignConfig;
use crate::criteria::{
    self, attach_hybrid, compress_joint, d_optimality, fisher_information, imspe, local_slope, maximin, mi_scores, mi_scores_split,
    slope_change, CandidateBlock, CandidateScore, Criterion, JointComponent,
};
use crate::error::{Error, Result};
use crate::gmm::CompressionStats;
use crate::koh::KohModelState;
use crate::rng::{self, tag};

/// Inputs shared by every criterion in one round.
pub struct RoundInputs<'a> {
    pub state: &'a KohModelState,
    pub caches: &'a [SampleCache],
    pub candidates: &'a [Vec<f64>],
    /// Selected points not yet part of the model data (SDE).
    pub pending: &'a [Vec<f64>],
    /// All points selected so far.
    pub selected: &'a [Vec<f64>],
    pub round: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ScoreOutput {
    pub scores: Vec<CandidateScore>,
    /// Monte Carlo standard errors of MI scores, aligned with `scores`.
    pub std_errors: Option<Vec<f64>>,
    pub compression: Option<CompressionStats>,
    /// Number of mixture components the MI estimator used.
    pub mixture_components: Option<usize>,
}

fn table(remaining: &[usize], raw: Vec<f64>, criterion: Criterion) -> Vec<CandidateScore> {
    remaining
        .iter()
        .zip(raw)
        .map(|(&c, raw)| CandidateScore { candidate_index: c, raw, complexity: None, hybrid: None, direction: criterion.direction() })
        .collect()
}

/// Joint Gaussian of `(y*, y_new(ξ))` per posterior sample for every
/// remaining candidate.
pub fn mi_components(caches: &[SampleCache], remaining: &[usize]) -> Result<Vec<JointComponent>> {
    let w = 1.0 / caches.len() as f64;
    caches
        .par_iter()
        .map(|cache| {
            let blocks = remaining
                .iter()
                .map(|&c| {
                    let step = cache.ctx.candidate_step(&cache.pre, c)?;
                    Ok(CandidateBlock { mean: cache.candidate_mean(c), cross: step.v, cov: step.schur })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(JointComponent { weight: w, mean: cache.mean_pred.clone(), cov: cache.ctx.sigma_star.clone(), blocks })
        })
        .collect()
}

fn mi_round(inp: &RoundInputs, remaining: &[usize], cfg: &CampaignConfig, out: &mut ScoreOutput) -> Result<Vec<f64>> {
    let comps = mi_components(inp.caches, remaining)?;
    let mut nmc = cfg.nmc.clone();
    nmc.seed = rng::derive(cfg.seed, &[tag::NMC, inp.round as u64]);
    let est = match &cfg.compression {
        Some(cc) if comps.len() > cc.j_target => {
            let mut cc = cc.clone();
            cc.seed = rng::derive(cfg.seed, &[tag::KMEANS, inp.round as u64]);
            let (merged, stats) = compress_joint(&comps, &cc)?;
            out.compression = Some(stats);
            out.mixture_components = Some(merged.len());
            mi_scores_split(&comps, &merged, &nmc)?
        }
        _ => {
            out.mixture_components = Some(comps.len());
            mi_scores(&comps, &nmc)?
        }
    };
    out.std_errors = Some(est.iter().map(|e| e.std_error).collect());
    Ok(est.iter().map(|e| e.value).collect())
}

fn imspe_round(inp: &RoundInputs, remaining: &[usize]) -> Result<Vec<f64>> {
    let w = 1.0 / inp.caches.len() as f64;
    let samples: Vec<_> = inp.caches.iter().map(|c| (w, c.pre.as_ref(), &c.ctx)).collect();
    remaining.par_iter().map(|&c| imspe(c, &samples)).collect()
}

fn dopt_round(inp: &RoundInputs, remaining: &[usize], cfg: &CampaignConfig) -> Result<Vec<f64>> {
    let idx = criteria::thin(inp.state.posterior.len(), cfg.fim.max_samples);
    remaining
        .par_iter()
        .map(|&c| {
            let mut design = inp.pending.to_vec();
            design.push(inp.candidates[c].clone());
            let fims = idx
                .iter()
                .map(|&j| fisher_information(inp.state, &inp.state.posterior[j], &design, &cfg.fim))
                .collect::<Result<Vec<_>>>()?;
            Ok(d_optimality(&fims))
        })
        .collect()
}

/// Local slope of the posterior-averaged mean at every candidate.
pub fn candidate_slopes(inp: &RoundInputs, fd_step: f64) -> Result<Vec<f64>> {
    let surface = MeanSurface::new(inp.state, inp.caches);
    inp.candidates
        .par_iter()
        .map(|x| local_slope(x, |z| surface.mean(z), &inp.state.design_box, fd_step))
        .collect()
}

/// Composite complexity of the remaining candidates. Slope changes use
/// neighbours among all candidates; normalization runs over the remaining.
pub fn remaining_complexity(inp: &RoundInputs, remaining: &[usize], cfg: &CampaignConfig) -> Result<Vec<f64>> {
    let slopes = candidate_slopes(inp, cfg.complexity.fd_step)?;
    let g: Vec<f64> = remaining.iter().map(|&c| slopes[c]).collect();
    let s: Vec<f64> = remaining
        .iter()
        .map(|&c| slope_change(&slopes, inp.candidates, c, cfg.complexity.k_neighbors))
        .collect();
    criteria::composite_complexity(&g, &s, &cfg.complexity)
}

pub fn score_candidates(inp: &RoundInputs, remaining: &[usize], cfg: &CampaignConfig) -> Result<ScoreOutput> {
    if remaining.is_empty() {
        return Err(Error::SelectionFailure { count: 0 });
    }
    let mut out = ScoreOutput::default();
    let raw = match cfg.criterion {
        Criterion::Mi | Criterion::MiCx => mi_round(inp, remaining, cfg, &mut out)?,
        Criterion::Imspe | Criterion::ImspeCx => imspe_round(inp, remaining)?,
        Criterion::Dopt => dopt_round(inp, remaining, cfg)?,
        Criterion::Maximin => remaining.iter().map(|&c| maximin(&inp.candidates[c], inp.selected)).collect(),
    };
    out.scores = table(remaining, raw, cfg.criterion);
    if cfg.criterion.uses_complexity() {
        let cx = remaining_complexity(inp, remaining, cfg)?;
        attach_hybrid(&mut out.scores, &cx, &cfg.complexity);
    }
    Ok(out)
}
