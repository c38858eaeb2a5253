//! Predictive accuracy: Bayesian mean squared error of the posterior-averaged
//! mean and the sample estimator of the continuous ranked probability score.
//!
//! Prediction vectors are location-major with `p` outputs per location; both
//! metrics sum over locations and average over outputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CholFactor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetric {
    pub mse: f64,
    pub crps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub crps: f64,
    pub n_pred: usize,
    pub n_samples_s: usize,
    pub per_task: Option<Vec<TaskMetric>>,
}

/// `‖μ̄ − y‖²` with `μ̄` the row average of `means` (J × n).
pub fn mse(means: &DMatrix<f64>, truth: &[f64]) -> Result<f64> {
    Ok(mse_per_task(means, truth, 1)?[0])
}

fn check(cols: usize, truth: &[f64], p: usize) -> Result<()> {
    if cols != truth.len() {
        return Err(Error::DimensionMismatch { context: "prediction vector", expected: truth.len(), found: cols });
    }
    if p == 0 || truth.len() % p != 0 {
        return Err(Error::DimensionMismatch { context: "outputs per location", expected: p, found: truth.len() });
    }
    Ok(())
}

pub fn mse_per_task(means: &DMatrix<f64>, truth: &[f64], p: usize) -> Result<Vec<f64>> {
    check(means.ncols(), truth, p)?;
    if means.nrows() == 0 {
        return Err(Error::EmptyInput("posterior means"));
    }
    let first = means.row(0).into_owned();
    let avg = &first + (means - DMatrix::from_fn(means.nrows(), means.ncols(), |_, j| first[j])).row_mean();
    let mut out = vec![0.0; p];
    for (i, y) in truth.iter().enumerate() {
        out[i % p] += (avg[i] - y).powi(2);
    }
    Ok(out)
}

/// CRPS of one coordinate by the O(S log S) sorted form.
pub fn crps_sorted(samples: &mut [f64], truth: f64) -> f64 {
    let s = samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    let first: f64 = samples.iter().map(|x| (x - truth).abs()).sum::<f64>() / s;
    let spread: f64 = samples.iter().enumerate().map(|(i, x)| (2.0 * (i as f64 + 1.0) - s - 1.0) * x).sum::<f64>();
    first - spread / (s * s)
}

/// CRPS of one coordinate by the literal double sum.
pub fn crps_double_sum(samples: &[f64], truth: f64) -> f64 {
    let s = samples.len() as f64;
    let first: f64 = samples.iter().map(|x| (x - truth).abs()).sum::<f64>() / s;
    let mut pair = 0.0;
    for a in samples {
        for b in samples {
            pair += (a - b).abs();
        }
    }
    first - pair / (2.0 * s * s)
}

/// CRPS summed over coordinates; `samples` is n × S (one column per draw).
pub fn crps(samples: &DMatrix<f64>, truth: &[f64]) -> Result<f64> {
    Ok(crps_per_task(samples, truth, 1)?[0])
}

pub fn crps_per_task(samples: &DMatrix<f64>, truth: &[f64], p: usize) -> Result<Vec<f64>> {
    check(samples.nrows(), truth, p)?;
    if samples.ncols() < 2 {
        return Err(Error::EmptyInput("at least two predictive samples"));
    }
    let per_coord: Vec<f64> = (0..truth.len())
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<f64> = samples.row(i).iter().copied().collect();
            crps_sorted(&mut row, truth[i])
        })
        .collect();
    let mut out = vec![0.0; p];
    for (i, v) in per_coord.iter().enumerate() {
        out[i % p] += v;
    }
    Ok(out)
}

/// Draws `s` predictive samples from an equally weighted Gaussian mixture:
/// a component uniformly at random, then a Gaussian draw. Returns n × S.
pub fn draw_predictive<R: Rng>(means: &[DVector<f64>], factors: &[CholFactor], s: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let j = means.len();
    if j == 0 || factors.len() != j {
        return Err(Error::EmptyInput("predictive mixture"));
    }
    let n = means[0].len();
    let picks: Vec<usize> = (0..s).map(|_| rng.random_range(0..j)).collect();
    let z = DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut out = DMatrix::zeros(n, s);
    let mut by_comp: Vec<Vec<usize>> = vec![Vec::new(); j];
    for (i, &k) in picks.iter().enumerate() {
        by_comp[k].push(i);
    }
    for (k, idx) in by_comp.iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let zk = DMatrix::from_fn(n, idx.len(), |r, c| z[(r, idx[c])]);
        let draws = &factors[k].l * zk;
        for (c, &i) in idx.iter().enumerate() {
            out.column_mut(i).copy_from(&(draws.column(c) + &means[k]));
        }
    }
    Ok(out)
}

/// Both metrics for a predictive mixture against a truth vector.
pub fn evaluate<R: Rng>(
    means: &[DVector<f64>],
    factors: &[CholFactor],
    truth: &[f64],
    p: usize,
    s: usize,
    rng: &mut R,
) -> Result<MetricReport> {
    let mean_mat = DMatrix::from_fn(means.len(), truth.len(), |r, c| means[r][c]);
    let m = mse_per_task(&mean_mat, truth, p)?;
    let samples = draw_predictive(means, factors, s, rng)?;
    let c = crps_per_task(&samples, truth, p)?;
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(MetricReport {
        mse: avg(&m),
        crps: avg(&c),
        n_pred: truth.len() / p,
        n_samples_s: s,
        per_task: (p > 1).then(|| m.iter().zip(&c).map(|(&mse, &crps)| TaskMetric { mse, crps }).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        let t = [1.0, 2.0];
        assert_eq!(mse(&DMatrix::from_row_slice(1, 2, &t), &t).unwrap(), 0.0);
        assert_eq!(mse(&DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(mse(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]), &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn crps_examples() {
        assert_eq!(crps(&DMatrix::from_element(1, 3, 1.5), &[1.5]).unwrap(), 0.0);
        assert!((crps(&DMatrix::from_row_slice(1, 2, &[0.0, 2.0]), &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((crps_double_sum(&[0.0, 2.0], 1.0) - 0.5).abs() < 1e-15);
        let mut last = 0.0;
        for d in [5.0, 10.0, 20.0] {
            let v = crps(&DMatrix::from_row_slice(1, 3, &[-0.5, 0.0, 0.5]), &[d]).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn multi_task_averages_outputs() {
        let means = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(mse_per_task(&means, &[0.0; 4], 2).unwrap(), vec![2.0, 0.0]);
    }

    #[test]
    fn report_from_point_masses() {
        let means = vec![DVector::from_vec(vec![1.0, 2.0])];
        let f = crate::linalg::cholesky(&(DMatrix::identity(2, 2) * 1e-20), 0.0).unwrap();
        let r = evaluate(&means, &[f], &[1.0, 2.0], 1, 50, &mut crate::rng::stream(0, &[])).unwrap();
        assert_eq!(r.mse, 0.0);
        assert!(r.crps < 1e-9);
        assert_eq!(r.n_pred, 2);
    }

    proptest! {
        #[test]
        fn sorted_form_matches_double_sum(xs in proptest::collection::vec(-10.0f64..10.0, 2..60), y in -12.0f64..12.0) {
            let mut v = xs.clone();
            let a = crps_sorted(&mut v, y);
            let b = crps_double_sum(&xs, y);
            prop_assert!((a - b).abs() < 1e-10);
            prop_assert!(a >= -1e-12);
        }

        #[test]
        fn mse_ignores_sample_order(rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 1..8)) {
            let m = DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
            let mut rev = rows.clone();
            rev.reverse();
            let mr = DMatrix::from_fn(rev.len(), 3, |r, c| rev[r][c]);
            let t = [0.1, -0.2, 0.3];
            prop_assert!((mse(&m, &t).unwrap() - mse(&mr, &t).unwrap()).abs() < 1e-12);
        }
    }
}
