use kohdesign::metrics::{crps_double_sum, crps_sorted, mse};
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #[test]
    fn sorted_crps_equals_double_sum(samples in prop::collection::vec(-50.0f64..50.0, 1..60), truth in -60.0f64..60.0) {
        let a = crps_double_sum(&samples, truth);
        let mut s = samples.clone();
        let b = crps_sorted(&mut s, truth);
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        prop_assert!(b >= -1e-12);
    }

    #[test]
    fn crps_of_a_point_mass_is_the_absolute_error(x in -10.0f64..10.0, truth in -10.0f64..10.0, n in 1usize..20) {
        let mut s = vec![x; n];
        prop_assert!((crps_sorted(&mut s, truth) - (x - truth).abs()).abs() < 1e-12);
    }

    #[test]
    fn mse_is_zero_exactly_at_the_truth(truth in prop::collection::vec(-5.0f64..5.0, 1..20), s in 1usize..5) {
        let means = DMatrix::from_fn(s, truth.len(), |_, j| truth[j]);
        prop_assert_eq!(mse(&means, &truth).unwrap(), 0.0);
    }
}
