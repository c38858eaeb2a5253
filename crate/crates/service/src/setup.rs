//! Scenario and campaign preparation shared by the CLI and the HTTP API, so
//! that both paths drive the engine identically for the same inputs.

use std::path::Path;

use kohdesign::design_loop::{CampaignConfig, CampaignState};
use kohdesign::koh::KohModelState;
use kohdesign::scenarios::{Scenario, ScenarioConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const SCHEMA_VERSION: u32 = 1;

/// A built scenario with the campaign configuration resolved against it.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub scenario_config: ScenarioConfig,
    pub scenario: Scenario,
    pub config: CampaignConfig,
}

/// Applies `seed` to both the scenario and the campaign, builds the scenario
/// and resolves the configuration.
pub fn prepare(mut scenario: ScenarioConfig, mut config: CampaignConfig, seed: Option<u64>) -> Result<Prepared> {
    if let Some(s) = seed {
        scenario.seed = s;
        config.seed = s;
    }
    let built = scenario.build()?;
    let config = config.resolved(&built);
    config.validate(built.candidates.len())?;
    Ok(Prepared { scenario_config: scenario, scenario: built, config })
}

impl Prepared {
    pub fn fit(&self) -> Result<KohModelState> {
        Ok(self.scenario.fit(&self.config.stage1, &self.config.mcmc)?)
    }

    pub fn initial_state(&self, model: KohModelState) -> Result<CampaignState> {
        Ok(CampaignState::new(model, self.scenario.candidates.clone(), self.config.max_precompute_bytes)?)
    }
}

/// Reads a campaign configuration from TOML (`.toml`) or JSON.
pub fn load_config(path: &Path) -> Result<CampaignConfig> {
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| ServiceError::Core(e.into())),
        _ => Ok(serde_json::from_str(&text)?),
    }
}

/// Fitted model written by `kohdesign fit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub config: CampaignConfig,
    pub model: KohModelState,
}

impl ModelDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let doc: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        check_schema(doc.schema_version)?;
        Ok(doc)
    }
}

pub fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(ServiceError::invalid(format!("schema version {version} is not supported (expected {SCHEMA_VERSION})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_reaches_scenario_and_campaign() {
        let p = prepare(ScenarioConfig::toy(), CampaignConfig::default(), Some(7)).unwrap();
        assert_eq!(p.scenario_config.seed, 7);
        assert_eq!(p.config.seed, 7);
        assert_eq!(p.config.complexity.alpha, p.scenario.alpha);
        let again = prepare(ScenarioConfig::toy().with_seed(7), CampaignConfig { seed: 7, ..Default::default() }, None).unwrap();
        assert_eq!(again.config, p.config);
        assert_eq!(again.scenario.data, p.scenario.data);
    }

    #[test]
    fn oversized_budget_is_rejected() {
        let cfg = CampaignConfig { budget: 10_000, ..Default::default() };
        assert!(prepare(ScenarioConfig::toy(), cfg, None).is_err());
    }

    #[test]
    fn config_files_parse_in_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "budget = 3\ncriterion = \"imspe\"\n[nmc]\nouter_s = 500\n").unwrap();
        let c = load_config(&t).unwrap();
        assert_eq!((c.budget, c.nmc.outer_s), (3, 500));
        let j = dir.path().join("c.json");
        std::fs::write(&j, r#"{"budget": 4, "mode": "ade"}"#).unwrap();
        assert_eq!(load_config(&j).unwrap().budget, 4);
    }
}
