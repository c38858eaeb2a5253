use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{CampaignConfig, Selection};
use crate::criteria::CandidateScore;
use crate::error::Result;
use crate::metrics::MetricReport;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub scoring_secs: f64,
    pub commit_secs: f64,
    pub metrics_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected_index: usize,
    pub point: Vec<f64>,
    pub observation: Option<Vec<f64>>,
    pub scores: Vec<CandidateScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_components: Option<usize>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub timing: RoundTiming,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub criterion: String,
    pub rounds: usize,
    pub scoring_total_secs: f64,
    pub commit_total_secs: f64,
    pub metrics_total_secs: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub scenario: String,
    pub config: CampaignConfig,
    pub selected: Vec<Selection>,
    pub rounds: Vec<RoundRecord>,
    /// Entry `b` holds the metrics after `b` rounds; entry 0 is the initial fit.
    pub metrics: Vec<MetricReport>,
    /// SDE only: metrics with the selected points observed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posthoc_metrics: Option<Vec<MetricReport>>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub timing: TimingSummary,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl CampaignResult {
    pub(super) fn new(
        config: CampaignConfig,
        scenario: &str,
        selected: Vec<Selection>,
        rounds: Vec<RoundRecord>,
        metrics: Vec<MetricReport>,
        posthoc_metrics: Option<Vec<MetricReport>>,
        wall_secs: f64,
    ) -> Self {
        let sum = |f: fn(&RoundTiming) -> f64| rounds.iter().map(|r| f(&r.timing)).sum();
        let timing = TimingSummary {
            criterion: config.criterion.to_string(),
            rounds: rounds.len(),
            scoring_total_secs: sum(|t| t.scoring_secs),
            commit_total_secs: sum(|t| t.commit_secs),
            metrics_total_secs: sum(|t| t.metrics_secs),
            wall_secs,
        };
        Self { scenario: scenario.to_string(), config, selected, rounds, metrics, posthoc_metrics, timing }
    }

    /// Copy with all wall-clock fields cleared, so that equal runs serialize
    /// to identical bytes.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.timing = TimingSummary::default();
        for round in &mut r.rounds {
            round.timing = RoundTiming::default();
        }
        r
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.candidate_index).collect()
    }

    pub fn mse_series(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.mse).collect()
    }

    pub fn crps_series(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.crps).collect()
    }

    /// Score tables as CSV: round, candidate_index, raw, complexity, hybrid,
    /// selected_flag.
    pub fn write_scores_csv<W: Write>(&self, out: W) -> Result<()> {
        write_scores_csv(&self.rounds, out)
    }
}

pub fn write_scores_csv<W: Write>(rounds: &[RoundRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "candidate_index", "raw", "complexity", "hybrid", "selected_flag"])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rounds {
        for s in &r.scores {
            w.write_record([
                r.round.to_string(),
                s.candidate_index.to_string(),
                s.raw.to_string(),
                opt(s.complexity),
                opt(s.hybrid),
                u8::from(s.candidate_index == r.selected_index).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
