//! Scores the toy candidates by mutual information with and without
//! mixture compression and compares the two tables.
//!
//! `cargo run --release --example mi_scoring`

use std::time::Instant;

use kohdesign::criteria::{Criterion, NmcConfig};
use kohdesign::design_loop::{suggest_next, CampaignConfig, CampaignState};
use kohdesign::koh::McmcConfig;
use kohdesign::scenarios::ScenarioConfig;

fn main() -> kohdesign::Result<()> {
    let scenario = ScenarioConfig::toy().build()?;
    let base = CampaignConfig {
        criterion: Criterion::Mi,
        nmc: NmcConfig { outer_s: 2000, ..Default::default() },
        mcmc: McmcConfig { draws: 300, ..Default::default() },
        ..Default::default()
    }
    .resolved(&scenario);
    let model = scenario.fit(&base.stage1, &base.mcmc)?;
    let state = CampaignState::new(model, scenario.candidates.clone(), base.max_precompute_bytes)?;

    let naive_cfg = CampaignConfig { compression: None, ..base.clone() };
    let t = Instant::now();
    let naive = suggest_next(&state, &naive_cfg)?;
    let naive_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let comp = suggest_next(&state, &base)?;
    let comp_secs = t.elapsed().as_secs_f64();

    println!("{:>5} {:>8} {:>10} {:>10}", "cand", "x", "naive", "compressed");
    for (a, b) in naive.scores.iter().zip(&comp.scores) {
        let x = scenario.candidates[a.candidate_index][0];
        println!("{:>5} {:>8.3} {:>10.4} {:>10.4}", a.candidate_index, x, a.raw, b.raw);
    }
    println!("naive: {} components, best {} in {naive_secs:.2}s", naive.mixture_components.unwrap_or(0), naive.candidate_index);
    println!("compressed: {} components, best {} in {comp_secs:.2}s", comp.mixture_components.unwrap_or(0), comp.candidate_index);
    Ok(())
}
