//! Sequential design campaigns.
//!
//! Each round scores the remaining candidates under one criterion and picks
//! the best. Sequential design (SDE) never observes the chosen points: the
//! posterior stays fixed and only the predictive covariance shrinks, through
//! the fast updates. Adaptive design (ADE) observes each chosen point, refits
//! the posterior and rebuilds the per-sample caches.

pub mod cache;
mod result;
pub mod scoring;

use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::criteria::{select_best, CandidateScore, ComplexityConfig, Criterion, FimConfig, NmcConfig};
use crate::error::{Error, Result};
use crate::fast_update::DEFAULT_MAX_BYTES;
use crate::gmm::{CompressionConfig, CompressionStats};
use crate::koh::{ExtraPoint, KohModelState, McmcConfig};
use crate::metrics::{self, MetricReport};
use crate::rng::{self, tag};
use crate::scenarios::Scenario;
pub use cache::{build_caches, MeanSurface, SampleCache};
pub use result::{write_scores_csv, CampaignResult, RoundRecord, RoundTiming, TimingSummary};
pub use scoring::{score_candidates, RoundInputs, ScoreOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sde,
    Ade,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sde" => Ok(Mode::Sde),
            "ade" => Ok(Mode::Ade),
            _ => Err(Error::InvalidConfig(format!("unknown mode '{s}'"))),
        }
    }
}

/// How each round's point is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Criterion,
    /// Uniformly random among remaining candidates (benchmark baseline).
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub mode: Mode,
    pub criterion: Criterion,
    pub policy: Policy,
    pub budget: usize,
    pub nmc: NmcConfig,
    pub complexity: ComplexityConfig,
    /// Hybrid weight; `None` takes the scenario's value.
    pub alpha: Option<f64>,
    pub compression: Option<CompressionConfig>,
    pub stage1: McmcConfig,
    pub mcmc: McmcConfig,
    pub fim: FimConfig,
    /// Predictive draws per metric evaluation.
    pub metric_samples: usize,
    /// Also score SDE rounds as if the selected points had been observed.
    pub posthoc_metrics: bool,
    /// Total memory allowed for dense per-sample precomputation.
    pub max_precompute_bytes: usize,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sde,
            criterion: Criterion::MiCx,
            policy: Policy::Criterion,
            budget: 10,
            nmc: NmcConfig::default(),
            complexity: ComplexityConfig::default(),
            alpha: None,
            compression: Some(CompressionConfig::default()),
            stage1: McmcConfig::default(),
            mcmc: McmcConfig::default(),
            fim: FimConfig::default(),
            metric_samples: 10_000,
            posthoc_metrics: false,
            max_precompute_bytes: 16 * DEFAULT_MAX_BYTES,
            seed: 0,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self, n_candidates: usize) -> Result<()> {
        if self.budget > n_candidates {
            return Err(Error::InvalidConfig(format!("budget {} exceeds {n_candidates} candidates", self.budget)));
        }
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1]")));
            }
        }
        self.nmc.validate()?;
        self.complexity.validate()?;
        if let Some(c) = &self.compression {
            c.validate()?;
        }
        if self.metric_samples < 2 {
            return Err(Error::InvalidConfig("metric_samples must be at least 2".into()));
        }
        Ok(())
    }

    /// Copy with the hybrid weight and sampler seeds filled in.
    pub fn resolved(&self, scenario: &Scenario) -> Self {
        let mut c = self.clone();
        c.complexity.alpha = self.alpha.unwrap_or(scenario.alpha);
        c.stage1.seed = rng::derive(self.seed, &[tag::STAGE1]);
        c.mcmc.seed = rng::derive(self.seed, &[tag::STAGE2]);
        c
    }

    /// Sampler settings for the ADE refit after `round` observations.
    pub fn refit_config(&self, round: usize) -> McmcConfig {
        let mut m = self.mcmc.clone();
        m.seed = rng::derive(self.mcmc.seed, &[round as u64]);
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub candidate_index: usize,
    pub point: Vec<f64>,
    pub observation: Option<Vec<f64>>,
}

/// Outcome of scoring one round.
#[derive(Clone, Debug)]
pub struct Suggestion {
    pub candidate_index: usize,
    pub scores: Vec<CandidateScore>,
    pub std_errors: Option<Vec<f64>>,
    pub compression: Option<CompressionStats>,
    pub mixture_components: Option<usize>,
    pub elapsed_secs: f64,
}

/// Model, selections and per-sample caches of a running campaign. Cloning is
/// cheap: the model and precomputed matrices are shared.
#[derive(Clone, Debug)]
pub struct CampaignState {
    pub model: Arc<KohModelState>,
    pub candidates: Arc<Vec<Vec<f64>>>,
    pub selected: Vec<Selection>,
    pub round: usize,
    pub history: Vec<RoundRecord>,
    caches: Arc<Vec<SampleCache>>,
    max_bytes: usize,
}

impl CampaignState {
    pub fn new(model: KohModelState, candidates: Vec<Vec<f64>>, max_precompute_bytes: usize) -> Result<Self> {
        Self::from_arc(Arc::new(model), Arc::new(candidates), Vec::new(), max_precompute_bytes)
    }

    fn from_arc(
        model: Arc<KohModelState>,
        candidates: Arc<Vec<Vec<f64>>>,
        selected: Vec<Selection>,
        max_bytes: usize,
    ) -> Result<Self> {
        if model.posterior.is_empty() {
            return Err(Error::EmptyInput("posterior"));
        }
        let d = model.data.design_dim();
        if let Some(x) = candidates.iter().find(|x| x.len() != d) {
            return Err(Error::DimensionMismatch { context: "candidate", expected: d, found: x.len() });
        }
        let caches = build_caches(&model, &candidates, max_bytes)?;
        let round = selected.len();
        Ok(Self { model, candidates, selected, round, history: Vec::new(), caches: Arc::new(caches), max_bytes })
    }

    /// Rebuilds an SDE or ADE state from its model and selection list.
    pub fn restore(model: KohModelState, candidates: Vec<Vec<f64>>, selected: Vec<Selection>, max_bytes: usize) -> Result<Self> {
        let mut st = Self::from_arc(Arc::new(model), Arc::new(candidates), Vec::new(), max_bytes)?;
        for s in selected {
            st = match s.observation {
                None => commit_sde(&st, s.candidate_index)?,
                Some(_) => {
                    // The model already contains the observation.
                    st.push_selection(s);
                    st
                }
            };
        }
        Ok(st)
    }

    pub fn caches(&self) -> &[SampleCache] {
        &self.caches
    }

    pub fn is_selected(&self, c: usize) -> bool {
        self.selected.iter().any(|s| s.candidate_index == c)
    }

    pub fn remaining(&self) -> Vec<usize> {
        (0..self.candidates.len()).filter(|&c| !self.is_selected(c)).collect()
    }

    /// Selected points not yet observed.
    pub fn pending_points(&self) -> Vec<Vec<f64>> {
        self.selected.iter().filter(|s| s.observation.is_none()).map(|s| s.point.clone()).collect()
    }

    pub fn selected_points(&self) -> Vec<Vec<f64>> {
        self.selected.iter().map(|s| s.point.clone()).collect()
    }

    fn push_selection(&mut self, s: Selection) {
        self.selected.push(s);
        self.round = self.selected.len();
    }

    fn check_new(&self, c: usize) -> Result<()> {
        if c >= self.candidates.len() {
            return Err(Error::InvalidConfig(format!("candidate {c} out of range 0..{}", self.candidates.len())));
        }
        if self.is_selected(c) {
            return Err(Error::DuplicateSelection { candidate: c });
        }
        Ok(())
    }

    /// Metrics of the current predictive mixture against `truth`.
    pub fn metrics(&self, truth: &[f64], samples: usize, seed: u64) -> Result<MetricReport> {
        let (means, factors) = cache::predictive_factors(&self.caches)?;
        let mut rng = rng::stream(seed, &[tag::METRICS, self.round as u64]);
        metrics::evaluate(&means, &factors, truth, self.model.n_outputs(), samples, &mut rng)
    }

    /// Metrics after conditioning the fixed posterior on observed values at
    /// the selected points.
    pub fn posthoc_metrics(&self, observations: &[Vec<f64>], truth: &[f64], samples: usize, seed: u64) -> Result<MetricReport> {
        use rayon::prelude::*;
        let extra: Vec<ExtraPoint> = self
            .selected
            .iter()
            .zip(observations)
            .map(|(s, y)| ExtraPoint { x: s.point.clone(), y: Some(y.clone()) })
            .collect();
        let preds = self
            .model
            .posterior
            .par_iter()
            .map(|w| self.model.predict(w, &extra))
            .collect::<Result<Vec<_>>>()?;
        let factors = preds.par_iter().map(|p| crate::linalg::cholesky(&p.cov.entries, 0.0)).collect::<Result<Vec<_>>>()?;
        let means: Vec<_> = preds.into_iter().map(|p| p.mean).collect();
        let mut rng = rng::stream(seed, &[tag::METRICS, self.round as u64]);
        metrics::evaluate(&means, &factors, truth, self.model.n_outputs(), samples, &mut rng)
    }
}

/// Pointwise predictive summary: mixture mean and central 95% interval for
/// each output on a grid. Entry `[t][i]` is output `t` at grid point `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveBand {
    pub grid: Vec<Vec<f64>>,
    pub mean: Vec<Vec<f64>>,
    pub lower95: Vec<Vec<f64>>,
    pub upper95: Vec<Vec<f64>>,
}

impl CampaignState {
    /// Band of the current predictive mixture on `grid`, or on the model's
    /// prediction grid.
    pub fn predictive_band(&self, grid: Option<Vec<Vec<f64>>>) -> Result<PredictiveBand> {
        predictive_band(&self.model, &self.pending_points(), grid)
    }
}

/// Band of the predictive mixture of `model` on `grid`, or on the model's
/// prediction grid. Unobserved `pending` points narrow the band.
pub fn predictive_band(model: &KohModelState, pending: &[Vec<f64>], grid: Option<Vec<Vec<f64>>>) -> Result<PredictiveBand> {
    let d = model.data.design_dim();
    let grid = grid.unwrap_or_else(|| model.prediction_grid.clone());
    if grid.is_empty() {
        return Err(Error::EmptyInput("prediction grid"));
    }
    if let Some(x) = grid.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch { context: "grid point", expected: d, found: x.len() });
    }
    if grid.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DomainViolation("non-finite grid coordinate".into()));
    }
    let mut model = model.clone();
    model.prediction_grid = grid.clone();
    let extra: Vec<ExtraPoint> = pending.iter().map(|x| ExtraPoint { x: x.clone(), y: None }).collect();
    let mix = model.predictive_mixture(&extra)?;
    let p = model.n_outputs();
    let mean = mix.mean();
    let per_output = |f: &dyn Fn(usize) -> Result<f64>| -> Result<Vec<Vec<f64>>> {
        (0..p).map(|t| (0..grid.len()).map(|i| f(i * p + t)).collect()).collect()
    };
    Ok(PredictiveBand {
        mean: per_output(&|k| Ok(mean[k]))?,
        lower95: per_output(&|k| mix.marginal_quantile(k, 0.025))?,
        upper95: per_output(&|k| mix.marginal_quantile(k, 0.975))?,
        grid,
    })
}

/// Scores every remaining candidate and returns the winner without
/// changing the state.
pub fn suggest_next(state: &CampaignState, cfg: &CampaignConfig) -> Result<Suggestion> {
    let t0 = Instant::now();
    let remaining = state.remaining();
    let pending = state.pending_points();
    let selected = state.selected_points();
    let inputs = RoundInputs {
        state: &state.model,
        caches: &state.caches,
        candidates: &state.candidates,
        pending: &pending,
        selected: &selected,
        round: state.round,
    };
    let out = match cfg.policy {
        Policy::Criterion => score_candidates(&inputs, &remaining, cfg)?,
        Policy::Random => ScoreOutput::default(),
    };
    let candidate_index = match cfg.policy {
        Policy::Criterion => select_best(&out.scores)?,
        Policy::Random => {
            let mut r = rng::stream(cfg.seed, &[tag::BASELINE, state.round as u64]);
            *remaining.choose(&mut r).ok_or(Error::SelectionFailure { count: 0 })?
        }
    };
    Ok(Suggestion {
        candidate_index,
        scores: out.scores,
        std_errors: out.std_errors,
        compression: out.compression,
        mixture_components: out.mixture_components,
        elapsed_secs: t0.elapsed().as_secs_f64(),
    })
}

/// Adds an unobserved point: the posterior is untouched and each sample's
/// conditioning context absorbs the point.
pub fn commit_sde(state: &CampaignState, candidate: usize) -> Result<CampaignState> {
    use rayon::prelude::*;
    state.check_new(candidate)?;
    let caches = state
        .caches
        .par_iter()
        .map(|c| {
            let step = c.ctx.candidate_step(&c.pre, candidate)?;
            let ctx = c.ctx.commit(&c.pre, &step)?;
            Ok(SampleCache { ctx, ..c.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut next = state.clone();
    next.caches = Arc::new(caches);
    next.push_selection(Selection { candidate_index: candidate, point: state.candidates[candidate].clone(), observation: None });
    Ok(next)
}

/// Adds an observed point, refits the posterior and rebuilds the caches.
pub fn commit_ade(state: &CampaignState, candidate: usize, y_new: &[f64], mcmc: &McmcConfig) -> Result<CampaignState> {
    state.check_new(candidate)?;
    if !state.pending_points().is_empty() {
        return Err(Error::InvalidConfig("cannot observe after unobserved selections".into()));
    }
    let point = state.candidates[candidate].clone();
    let model = state.model.append_observation(&point, y_new, mcmc)?;
    let mut next = CampaignState::from_arc(Arc::new(model), state.candidates.clone(), state.selected.clone(), state.max_bytes)?;
    next.history = state.history.clone();
    next.push_selection(Selection { candidate_index: candidate, point, observation: Some(y_new.to_vec()) });
    Ok(next)
}

/// Fits the scenario's initial model and runs the campaign.
pub fn run_campaign(cfg: &CampaignConfig, scenario: &Scenario) -> Result<CampaignResult> {
    let cfg = cfg.resolved(scenario);
    let model = scenario.fit(&cfg.stage1, &cfg.mcmc)?;
    let state = CampaignState::new(model, scenario.candidates.clone(), cfg.max_precompute_bytes)?;
    run_campaign_from(&state, &cfg, scenario)
}

/// Runs a campaign from an already fitted initial state. `cfg` should be
/// `resolved` against the scenario. Observations come from the scenario's
/// responder.
pub fn run_campaign_from(initial: &CampaignState, cfg: &CampaignConfig, scenario: &Scenario) -> Result<CampaignResult> {
    let mut respond = |round: usize, x: &[f64]| scenario.responder.respond(x, &mut scenario.responder_rng(cfg.seed, round));
    run_campaign_with(initial, cfg, scenario, &mut respond)
}

/// Observation source for a campaign: called with the zero-based round and
/// the chosen point.
pub type Respond<'a> = dyn FnMut(usize, &[f64]) -> Result<Vec<f64>> + 'a;

/// As [`run_campaign_from`] with observations supplied by `respond`.
pub fn run_campaign_with(
    initial: &CampaignState,
    cfg: &CampaignConfig,
    scenario: &Scenario,
    respond: &mut Respond,
) -> Result<CampaignResult> {
    cfg.validate(initial.candidates.len())?;
    let started = Instant::now();
    let mut state = initial.clone();
    let mut metrics = vec![state.metrics(&scenario.truth, cfg.metric_samples, cfg.seed)?];
    let mut posthoc = (cfg.mode == Mode::Sde && cfg.posthoc_metrics).then(|| vec![metrics[0].clone()]);
    let mut observed: Vec<Vec<f64>> = Vec::new();
    let mut rounds = Vec::with_capacity(cfg.budget);
    for b in 0..cfg.budget {
        let sug = suggest_next(&state, cfg)?;
        let c = sug.candidate_index;
        let t_commit = Instant::now();
        state = match cfg.mode {
            Mode::Sde => {
                if posthoc.is_some() {
                    observed.push(respond(b, &state.candidates[c])?);
                }
                commit_sde(&state, c)?
            }
            Mode::Ade => {
                let y = respond(b, &state.candidates[c])?;
                commit_ade(&state, c, &y, &cfg.refit_config(b + 1))?
            }
        };
        let commit_secs = t_commit.elapsed().as_secs_f64();
        let t_metrics = Instant::now();
        metrics.push(state.metrics(&scenario.truth, cfg.metric_samples, cfg.seed)?);
        if let Some(ph) = posthoc.as_mut() {
            ph.push(state.posthoc_metrics(&observed, &scenario.truth, cfg.metric_samples, cfg.seed)?);
        }
        let record = RoundRecord {
            round: b + 1,
            selected_index: c,
            point: state.candidates[c].clone(),
            observation: state.selected.last().and_then(|s| s.observation.clone()),
            scores: sug.scores,
            std_errors: sug.std_errors,
            mixture_components: sug.mixture_components,
            timing: RoundTiming { scoring_secs: sug.elapsed_secs, commit_secs, metrics_secs: t_metrics.elapsed().as_secs_f64() },
        };
        log::info!("round {} selected candidate {c} ({:.3}s scoring)", b + 1, record.timing.scoring_secs);
        state.history.push(record.clone());
        rounds.push(record);
    }
    Ok(CampaignResult::new(cfg.clone(), scenario.name(), state.selected, rounds, metrics, posthoc, started.elapsed().as_secs_f64()))
}

#[cfg(test)]
mod tests;
