//! Runs an adaptive (online) design campaign against the toy scenario's
//! simulated process, refitting the posterior after every observation.
//!
//! `cargo run --release --example ade_campaign -- [criterion] [budget] [seed]`

use kohdesign::criteria::Criterion;
use kohdesign::design_loop::{run_campaign, CampaignConfig, Mode};
use kohdesign::scenarios::ScenarioConfig;

fn main() -> kohdesign::Result<()> {
    let mut args = std::env::args().skip(1);
    let criterion: Criterion = args.next().as_deref().unwrap_or("mi+cx").parse()?;
    let budget = args.next().and_then(|b| b.parse().ok()).unwrap_or(5);
    let seed = args.next().and_then(|b| b.parse().ok()).unwrap_or(0);
    let scenario = ScenarioConfig::toy().with_seed(seed).build()?;
    let cfg = CampaignConfig { mode: Mode::Ade, criterion, budget, seed, ..Default::default() };
    let result = run_campaign(&cfg, &scenario)?;

    println!("round 0: MSE {:.3}, CRPS {:.3}", result.metrics[0].mse, result.metrics[0].crps);
    for (r, m) in result.rounds.iter().zip(&result.metrics[1..]) {
        let y = r.observation.as_ref().map_or(f64::NAN, |y| y[0]);
        println!("round {}: x = {:.3}, y = {:.3}, MSE {:.3}, CRPS {:.3}", r.round, r.point[0], y, m.mse, m.crps);
    }
    Ok(())
}
