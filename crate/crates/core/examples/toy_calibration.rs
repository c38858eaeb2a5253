//! Fits the two-stage calibration model to the toy scenario and reports the
//! calibration posterior and the initial predictive accuracy.
//!
//! `cargo run --release --example toy_calibration -- [seed]`

use kohdesign::design_loop::{CampaignConfig, CampaignState};
use kohdesign::scenarios::ScenarioConfig;

fn main() -> kohdesign::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scenario = ScenarioConfig::toy().with_seed(seed).build()?;
    let cfg = CampaignConfig { seed, ..Default::default() }.resolved(&scenario);
    let model = scenario.fit(&cfg.stage1, &cfg.mcmc)?;

    let j = model.posterior.len() as f64;
    for k in 0..2 {
        let mean = model.posterior.iter().map(|w| w.theta[k]).sum::<f64>() / j;
        let var = model.posterior.iter().map(|w| (w.theta[k] - mean).powi(2)).sum::<f64>() / j;
        println!("theta[{k}]: mean {mean:.3}, sd {:.3}", var.sqrt());
    }
    println!("frozen stage-1 kernel: {:?}", model.phi1);

    let state = CampaignState::new(model, scenario.candidates.clone(), cfg.max_precompute_bytes)?;
    let m = state.metrics(&scenario.truth, 2000, seed)?;
    println!("initial fit: MSE {:.3}, CRPS {:.3} over {} prediction points", m.mse, m.crps, m.n_pred);
    Ok(())
}
