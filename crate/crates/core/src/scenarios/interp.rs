use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    /// Natural cubic spline.
    Cubic,
}

/// One-dimensional interpolant, held flat outside the data range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interpolant {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots (all zero for linear).
    m: Vec<f64>,
}

impl Interpolant {
    pub fn new(xs: &[f64], ys: &[f64], kind: Interpolation) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch { context: "interpolation data", expected: xs.len(), found: ys.len() });
        }
        if xs.len() < 2 {
            return Err(Error::EmptyInput("at least two interpolation knots"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DomainViolation("interpolation knots must be strictly increasing".into()));
        }
        let m = match kind {
            Interpolation::Linear => vec![0.0; xs.len()],
            Interpolation::Cubic => natural_second_derivatives(xs, ys),
        };
        Ok(Self { xs: xs.to_vec(), ys: ys.to_vec(), m })
    }

    pub fn linear(xs: &[f64], ys: &[f64]) -> Result<Self> {
        Self::new(xs, ys, Interpolation::Linear)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.xs.partition_point(|&v| v <= x) - 1;
        let h = self.xs[k + 1] - self.xs[k];
        let a = (self.xs[k + 1] - x) / h;
        let b = 1.0 - a;
        a * self.ys[k]
            + b * self.ys[k + 1]
            + ((a.powi(3) - a) * self.m[k] + (b.powi(3) - b) * self.m[k + 1]) * h * h / 6.0
    }
}

fn natural_second_derivatives(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        let (h0, h1) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
        let rhs = 6.0 * ((ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0);
        let diag = 2.0 * (h0 + h1) - h0 * c[i - 1];
        c[i] = h1 / diag;
        d[i] = (rhs - h0 * d[i - 1]) / diag;
    }
    for i in (1..n - 1).rev() {
        m[i] = d[i] - c[i] * m[i + 1];
    }
    m
}

/// Interpolates each output column of `values` (one row per time) onto
/// `grid`, returning one row per grid point.
pub fn ground_truth_series(times: &[f64], values: &[Vec<f64>], grid: &[f64], kind: Interpolation) -> Result<Vec<Vec<f64>>> {
    let p = values.first().map_or(0, Vec::len);
    let cols = (0..p)
        .map(|t| Interpolant::new(times, &values.iter().map(|r| r[t]).collect::<Vec<_>>(), kind))
        .collect::<Result<Vec<_>>>()?;
    Ok(grid.iter().map(|&g| cols.iter().map(|c| c.eval(g)).collect()).collect())
}
