use kohdesign::scenarios::jakstat::{read_field_csv, write_field_csv, FieldRecord};
use kohdesign::scenarios::{maximin_lhd, Interpolant, Interpolation};
use proptest::prelude::*;

proptest! {
    #[test]
    fn lhd_puts_one_point_in_every_bin(n in 1usize..30, dims in 1usize..4, seed in any::<u64>()) {
        let bounds: Vec<(f64, f64)> = (0..dims).map(|k| (-(k as f64), 2.0 + k as f64)).collect();
        let lhd = maximin_lhd(n, &bounds, 3, seed);
        prop_assert_eq!(lhd.points.len(), n);
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            let mut bins: Vec<usize> = lhd.points.iter().map(|x| ((x[k] - lo) / (hi - lo) * n as f64).floor() as usize).collect();
            bins.sort();
            prop_assert_eq!(bins, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn linear_interpolation_stays_within_neighbouring_knots(
        ys in prop::collection::vec(-10.0f64..10.0, 2..12),
        frac in 0.0f64..1.0,
    ) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 1.5).collect();
        let f = Interpolant::new(&xs, &ys, Interpolation::Linear).unwrap();
        let x = frac * xs[xs.len() - 1];
        let i = ((x / 1.5).floor() as usize).min(ys.len() - 2);
        let (lo, hi) = (ys[i].min(ys[i + 1]), ys[i].max(ys[i + 1]));
        let v = f.eval(x);
        prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        for (k, &xk) in xs.iter().enumerate() {
            prop_assert!((f.eval(xk) - ys[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn field_csv_round_trips(rows in prop::collection::vec((0.0f64..1.0, -5.0f64..5.0, -5.0f64..5.0), 2..20)) {
        let records: Vec<FieldRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(d, x1, x2))| FieldRecord { time: i as f64 + 0.25, d, x1, x2 })
            .collect();
        let mut buf = Vec::new();
        write_field_csv(&records, &mut buf).unwrap();
        prop_assert_eq!(read_field_csv(buf.as_slice()).unwrap(), records);
    }
}
