//! Evaluates MSE and CRPS for a small predictive mixture against a known
//! truth and compares the two CRPS estimators.
//!
//! `cargo run --release --example crps_metrics`

use kohdesign::linalg::cholesky;
use kohdesign::metrics::{crps_double_sum, crps_sorted, evaluate};
use kohdesign::rng;
use nalgebra::{DMatrix, DVector};

fn main() -> kohdesign::Result<()> {
    let mut hand = [0.0, 2.0];
    println!("CRPS of {{0, 2}} against 1: {}", crps_sorted(&mut hand, 1.0));

    let means = vec![DVector::from_vec(vec![0.0, 1.0, 2.0]), DVector::from_vec(vec![0.2, 0.8, 2.4])];
    let cov = DMatrix::from_row_slice(3, 3, &[0.1, 0.02, 0.0, 0.02, 0.1, 0.02, 0.0, 0.02, 0.1]);
    let factors = vec![cholesky(&cov, 0.0)?, cholesky(&(cov.clone() * 2.0), 0.0)?];
    let truth = [0.1, 0.9, 2.2];
    let report = evaluate(&means, &factors, &truth, 1, 5000, &mut rng::stream(0, &[]))?;
    println!("MSE {:.4}, CRPS {:.4}", report.mse, report.crps);

    let samples: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = crps_double_sum(&samples, 0.1);
    let b = crps_sorted(&mut samples.clone(), 0.1);
    println!("double sum {a:.12}, sorted {b:.12}");
    Ok(())
}
