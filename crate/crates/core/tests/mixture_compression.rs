use kohdesign::gmm::{compress_detailed, moment_match, CompressionConfig};
use kohdesign::rng;
use kohdesign::synthetic::random_mixture;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn compression_preserves_global_moments(seed in any::<u64>(), j in 40usize..160, dim in 1usize..4, target in 1usize..12) {
        let mix = random_mixture(j, dim, &mut rng::stream(seed, &[])).unwrap();
        let cfg = CompressionConfig { j0: 30, j_target: target, nn_k: 5, refresh_r: 7, seed };
        let (m0, c0) = mix.moments();
        let mut sums = Vec::new();
        let out = compress_detailed(&mix, &cfg, |comps| sums.push(comps.iter().map(|c| c.weight).sum::<f64>())).unwrap();
        prop_assert_eq!(out.mixture.len(), target);
        prop_assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
        let (m1, c1) = out.mixture.moments();
        prop_assert!((&m1 - &m0).amax() <= 1e-8 * m0.amax().max(1.0));
        prop_assert!((&c1 - &c0).amax() <= 1e-8 * c0.amax());
        let mut seen: Vec<usize> = out.groups.concat();
        seen.sort();
        prop_assert_eq!(seen, (0..j).collect::<Vec<_>>());
        for (k, g) in out.groups.iter().enumerate() {
            let (m, _) = moment_match(g.iter().map(|&i| &mix.components[i]));
            prop_assert!((&m - &out.mixture.components[k].mean).amax() < 1e-8 * m.amax().max(1.0));
        }
    }

    #[test]
    fn sweep_cost_is_bounded_by_neighbor_lists(seed in any::<u64>(), nn_k in 1usize..8) {
        let mix = random_mixture(120, 2, &mut rng::stream(seed, &[])).unwrap();
        let cfg = CompressionConfig { j0: 60, j_target: 10, nn_k, refresh_r: 10, seed };
        let out = compress_detailed(&mix, &cfg, |_| {}).unwrap();
        prop_assert!(out.stats.sweep_evaluations.iter().all(|&e| e <= cfg.j0 * nn_k));
        prop_assert_eq!(out.stats.merges, 50);
    }
}
