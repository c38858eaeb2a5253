//! Compresses a random 1000-component Gaussian mixture to 30 components and
//! reports the preserved moments and the merge bookkeeping.
//!
//! `cargo run --release --example mixture_compression`

use kohdesign::gmm::{compress_detailed, CompressionConfig};
use kohdesign::rng;
use kohdesign::synthetic::random_mixture;

fn main() -> kohdesign::Result<()> {
    let mix = random_mixture(1000, 3, &mut rng::stream(11, &[]))?;
    let cfg = CompressionConfig::default();
    let out = compress_detailed(&mix, &cfg, |_| {})?;
    let (m0, c0) = mix.moments();
    let (m1, c1) = out.mixture.moments();
    println!("components: {} -> {}", mix.len(), out.mixture.len());
    println!("k-means iterations: {}, merges: {}", out.stats.kmeans_iterations, out.stats.merges);
    println!("neighbor sweeps: {:?} evaluations (bound {})", out.stats.sweep_evaluations, cfg.j0 * cfg.nn_k);
    println!("mean drift {:.2e}, covariance drift {:.2e}", (m1 - m0).amax(), (c1 - c0).amax());
    Ok(())
}
