//! Runs a sequential (offline) design campaign on the toy scenario and
//! prints the chosen points with the metrics after each round.
//!
//! `cargo run --release --example sde_campaign -- [criterion] [budget]`

use kohdesign::criteria::Criterion;
use kohdesign::design_loop::{run_campaign, CampaignConfig, Mode};
use kohdesign::scenarios::ScenarioConfig;

fn main() -> kohdesign::Result<()> {
    let mut args = std::env::args().skip(1);
    let criterion: Criterion = args.next().as_deref().unwrap_or("imspe+cx").parse()?;
    let budget = args.next().and_then(|b| b.parse().ok()).unwrap_or(5);
    let scenario = ScenarioConfig::toy().build()?;
    let cfg = CampaignConfig { mode: Mode::Sde, criterion, budget, posthoc_metrics: true, metric_samples: 2000, ..Default::default() };
    let result = run_campaign(&cfg, &scenario)?;

    let posthoc = result.posthoc_metrics.as_ref().expect("requested");
    println!("round 0: MSE {:.3}, CRPS {:.3}", result.metrics[0].mse, result.metrics[0].crps);
    for (r, m) in result.rounds.iter().zip(&posthoc[1..]) {
        println!("round {}: x = {:.3}, observed-data MSE {:.3}, CRPS {:.3}", r.round, r.point[0], m.mse, m.crps);
    }
    println!("scoring time {:.2}s", result.timing.scoring_total_secs);
    Ok(())
}
