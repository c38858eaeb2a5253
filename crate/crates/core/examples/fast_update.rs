//! Conditions a random calibration problem on a sequence of designed points
//! with the incremental updates and checks each step against a dense
//! recomputation.
//!
//! `cargo run --release --example fast_update -- [seed]`

use std::time::Instant;

use kohdesign::fast_update::{PrecomputedCovariance, UpdateContext};
use kohdesign::koh::ExtraPoint;
use kohdesign::rng;
use kohdesign::synthetic::{random_koh_state, RandomKohSize};

fn main() -> kohdesign::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let size = RandomKohSize { n_field: 15, m_sim: 50, n_pred: 100, n_cand: 10, outputs: 1 };
    let (state, cands) = random_koh_state(size, &mut rng::stream(seed, &[]))?;
    let omega = &state.posterior[0];
    let pre = PrecomputedCovariance::new(&state, omega, &cands, usize::MAX)?;
    let mut ctx = UpdateContext::new(&pre)?;
    let mut extra = Vec::new();
    for c in 0..cands.len() {
        let t = Instant::now();
        let step = ctx.candidate_step(&pre, c)?;
        ctx = ctx.commit(&pre, &step)?;
        let fast_secs = t.elapsed().as_secs_f64();
        extra.push(ExtraPoint { x: cands[c].clone(), y: None });
        let t = Instant::now();
        let dense = state.predict(omega, &extra)?.cov.entries;
        let dense_secs = t.elapsed().as_secs_f64();
        let err = (&ctx.sigma_star - &dense).amax() / dense.amax();
        println!(
            "round {:>2}: trace {:.5}, relative error {err:.1e}, fast {:.1e}s vs dense {:.1e}s",
            c + 1,
            ctx.trace(),
            fast_secs,
            dense_secs
        );
    }
    Ok(())
}
