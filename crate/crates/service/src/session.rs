//! Interactive campaign sessions: one suggestion at a time, observations
//! supplied by the client.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use kohdesign::criteria::CandidateScore;
use kohdesign::design_loop::{commit_ade, commit_sde, suggest_next, CampaignConfig, CampaignState, Mode, RoundRecord, RoundTiming, Selection};
use kohdesign::koh::KohModelState;
use kohdesign::metrics::MetricReport;
use kohdesign::scenarios::{Scenario, ScenarioConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::setup::{check_schema, prepare, SCHEMA_VERSION};

/// A scenario given by name (`toy`, `jakstat`, or a config file path) or
/// inline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioSpec {
    Name(String),
    Config(ScenarioConfig),
}

impl ScenarioSpec {
    pub fn resolve(self) -> Result<ScenarioConfig> {
        match self {
            Self::Name(n) => ScenarioConfig::resolve(&n).map_err(|e| ServiceError::InvalidBody {
                message: format!("unknown scenario '{n}': {e}"),
                detail: json!({ "scenario": n }),
            }),
            Self::Config(c) => Ok(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub config: CampaignConfig,
    /// Overrides both the scenario seed and the campaign seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// The current round's suggestion; kept until the next observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingSuggestion {
    pub round: usize,
    pub candidate_index: usize,
    pub point: Vec<f64>,
    pub alpha: f64,
    pub scores: Vec<CandidateScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_components: Option<usize>,
    pub elapsed_secs: f64,
}

/// Persisted state of one session. The model holds every observation made
/// so far, so the campaign state can be rebuilt from this record alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub scenario: ScenarioConfig,
    /// Resolved campaign configuration, seeds included.
    pub config: CampaignConfig,
    pub round: usize,
    pub candidates: Vec<Vec<f64>>,
    pub remaining: Vec<usize>,
    pub selected: Vec<Selection>,
    pub pending: Option<PendingSuggestion>,
    pub history: Vec<RoundRecord>,
    /// Entry `b` holds the metrics after `b` rounds.
    pub metrics: Vec<MetricReport>,
    pub model: KohModelState,
}

impl SessionRecord {
    pub fn pending_points(&self) -> Vec<Vec<f64>> {
        self.selected.iter().filter(|s| s.observation.is_none()).map(|s| s.point.clone()).collect()
    }

    pub fn budget_left(&self) -> usize {
        self.config.budget.saturating_sub(self.round)
    }
}

/// Outcome of one observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub session_id: String,
    pub round: usize,
    pub candidate_index: usize,
    pub suggested_index: usize,
    pub point: Vec<f64>,
    pub observation: Option<Vec<f64>>,
    pub metrics: MetricReport,
    pub remaining: usize,
    pub budget_left: usize,
}

struct Live {
    scenario: Scenario,
    state: CampaignState,
}

/// A session record together with its engine state, built on first use.
pub struct Session {
    pub record: SessionRecord,
    live: Option<Live>,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl Session {
    /// Builds the scenario, fits the initial model and scores round 0.
    pub fn create(session_id: String, req: CreateSession) -> Result<Self> {
        let p = prepare(req.scenario.resolve()?, req.config, req.seed)?;
        let state = p.initial_state(p.fit()?)?;
        let m0 = state.metrics(&p.scenario.truth, p.config.metric_samples, p.config.seed)?;
        let now = now_ms();
        let record = SessionRecord {
            schema_version: SCHEMA_VERSION,
            session_id,
            created_at_ms: now,
            updated_at_ms: now,
            scenario: p.scenario_config,
            config: p.config,
            round: 0,
            candidates: state.candidates.to_vec(),
            remaining: state.remaining(),
            selected: Vec::new(),
            pending: None,
            history: Vec::new(),
            metrics: vec![m0],
            model: (*state.model).clone(),
        };
        Ok(Self { record, live: Some(Live { scenario: p.scenario, state }) })
    }

    pub fn from_record(record: SessionRecord) -> Result<Self> {
        check_schema(record.schema_version)?;
        Ok(Self { record, live: None })
    }

    fn live(&mut self) -> Result<&mut Live> {
        if self.live.is_none() {
            let r = &self.record;
            let scenario = r.scenario.build()?;
            let state = CampaignState::restore(r.model.clone(), r.candidates.clone(), r.selected.clone(), r.config.max_precompute_bytes)?;
            self.live = Some(Live { scenario, state });
        }
        Ok(self.live.as_mut().expect("live state was just built"))
    }

    fn config_for(&self, alpha: Option<f64>) -> Result<CampaignConfig> {
        let mut cfg = self.record.config.clone();
        if let Some(a) = alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(ServiceError::InvalidBody { message: format!("alpha {a} outside [0, 1]"), detail: json!({ "alpha": a }) });
            }
            cfg.alpha = Some(a);
            cfg.complexity.alpha = a;
        }
        Ok(cfg)
    }

    fn check_open(&self) -> Result<()> {
        let r = &self.record;
        if r.budget_left() == 0 || r.remaining.is_empty() {
            return Err(ServiceError::conflict(
                "campaign_finished",
                format!("campaign finished after {} rounds", r.round),
                json!({ "round": r.round, "budget": r.config.budget, "remaining": r.remaining.len() }),
            ));
        }
        Ok(())
    }

    /// Scores the remaining candidates. Repeated calls with the same `alpha`
    /// return the stored suggestion until the next observation.
    pub fn suggest(&mut self, alpha: Option<f64>) -> Result<PendingSuggestion> {
        self.check_open()?;
        let cfg = self.config_for(alpha)?;
        if let Some(p) = &self.record.pending {
            if p.alpha == cfg.complexity.alpha {
                return Ok(p.clone());
            }
        }
        let state = &self.live()?.state;
        let s = suggest_next(state, &cfg)?;
        let pending = PendingSuggestion {
            round: state.round,
            candidate_index: s.candidate_index,
            point: state.candidates[s.candidate_index].clone(),
            alpha: cfg.complexity.alpha,
            scores: s.scores,
            std_errors: s.std_errors,
            mixture_components: s.mixture_components,
            elapsed_secs: s.elapsed_secs,
        };
        self.record.pending = Some(pending.clone());
        self.record.updated_at_ms = now_ms();
        Ok(pending)
    }

    /// Commits `candidate` (the suggestion or an override among the
    /// remaining candidates). Adaptive sessions require `y_new` and refit;
    /// sequential sessions take no observation.
    pub fn observe(&mut self, candidate: usize, y_new: Option<Vec<f64>>) -> Result<RoundSummary> {
        let Some(pending) = self.record.pending.clone() else {
            return Err(ServiceError::conflict("no_pending_suggestion", "observe requires a prior suggest in this round", json!({ "round": self.record.round })));
        };
        if !self.record.remaining.contains(&candidate) {
            return Err(ServiceError::conflict(
                "candidate_unavailable",
                format!("candidate {candidate} is not among the remaining candidates"),
                json!({ "candidate_index": candidate, "n_candidates": self.record.candidates.len() }),
            ));
        }
        let mode = self.record.config.mode;
        let p = self.record.model.n_outputs();
        match (&y_new, mode) {
            (None, Mode::Ade) => return Err(ServiceError::invalid("y_new is required in adaptive mode")),
            (Some(_), Mode::Sde) => return Err(ServiceError::invalid("y_new is not accepted in sequential mode")),
            (Some(y), Mode::Ade) if y.len() != p => {
                return Err(ServiceError::InvalidBody {
                    message: format!("y_new has {} values, expected {p}", y.len()),
                    detail: json!({ "expected": p, "found": y.len() }),
                })
            }
            (Some(y), _) if y.iter().any(|v| !v.is_finite()) => return Err(ServiceError::invalid("y_new must be finite")),
            _ => {}
        }
        let cfg = self.record.config.clone();
        let live = self.live()?;
        let t_commit = Instant::now();
        let next = match &y_new {
            Some(y) => commit_ade(&live.state, candidate, y, &cfg.refit_config(live.state.round + 1))?,
            None => commit_sde(&live.state, candidate)?,
        };
        let commit_secs = t_commit.elapsed().as_secs_f64();
        let t_metrics = Instant::now();
        let m = next.metrics(&live.scenario.truth, cfg.metric_samples, cfg.seed)?;
        let record = RoundRecord {
            round: next.round,
            selected_index: candidate,
            point: next.candidates[candidate].clone(),
            observation: y_new.clone(),
            scores: pending.scores,
            std_errors: pending.std_errors,
            mixture_components: pending.mixture_components,
            timing: RoundTiming { scoring_secs: pending.elapsed_secs, commit_secs, metrics_secs: t_metrics.elapsed().as_secs_f64() },
        };
        let (round, remaining, selected, model) = (next.round, next.remaining(), next.selected.clone(), (*next.model).clone());
        live.state = next;
        let r = &mut self.record;
        r.round = round;
        r.remaining = remaining;
        r.selected = selected;
        r.model = model;
        r.pending = None;
        r.history.push(record);
        r.metrics.push(m.clone());
        r.updated_at_ms = now_ms();
        Ok(RoundSummary {
            session_id: r.session_id.clone(),
            round: r.round,
            candidate_index: candidate,
            suggested_index: pending.candidate_index,
            point: r.candidates[candidate].clone(),
            observation: y_new,
            metrics: m,
            remaining: r.remaining.len(),
            budget_left: r.budget_left(),
        })
    }
}
