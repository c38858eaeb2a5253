use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::cholesky;

#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Finite Gaussian mixture with weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    pub components: Vec<Component>,
    pub dim: usize,
}

impl GaussianMixture {
    pub fn new(parts: Vec<(f64, DVector<f64>, DMatrix<f64>)>) -> Result<Self> {
        let dim = parts.first().map(|p| p.1.len()).ok_or(Error::EmptyInput("mixture components"))?;
        let mut total = 0.0;
        for (w, m, c) in &parts {
            if m.len() != dim || c.nrows() != dim || c.ncols() != dim {
                return Err(Error::DimensionMismatch { context: "mixture component", expected: dim, found: m.len() });
            }
            if !(*w >= 0.0) {
                return Err(Error::DomainViolation(format!("negative mixture weight {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::DomainViolation(format!("mixture weights sum to {total}")));
        }
        Ok(Self {
            components: parts.into_iter().map(|(weight, mean, cov)| Component { weight, mean, cov }).collect(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for c in &self.components {
            m.axpy(c.weight, &c.mean, 1.0);
        }
        m / self.total_weight()
    }

    /// Global mean and covariance `E[Σ] + Cov(μ)`.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        moment_match(self.components.iter())
    }

    /// Mixture log-density at `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.len());
        for c in &self.components {
            if c.weight <= 0.0 {
                continue;
            }
            let chol = cholesky(&c.cov, 0.0)?;
            terms.push(c.weight.ln() + crate::linalg::mvn_logpdf_chol(x, c.mean.as_slice(), &chol)?);
        }
        Ok(log_sum_exp(&terms))
    }

    /// CDF of coordinate `i` of the mixture at `x`.
    pub fn marginal_cdf(&self, i: usize, x: f64) -> f64 {
        let total = self.total_weight();
        self.components
            .iter()
            .map(|c| {
                let sd = c.cov[(i, i)].max(0.0).sqrt();
                let p = if sd > 0.0 {
                    0.5 * statrs::function::erf::erfc(-(x - c.mean[i]) / (sd * std::f64::consts::SQRT_2))
                } else {
                    f64::from(u8::from(x >= c.mean[i]))
                };
                c.weight * p
            })
            .sum::<f64>()
            / total
    }

    /// Quantile `q` of coordinate `i`, by bisection on the marginal CDF.
    pub fn marginal_quantile(&self, i: usize, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::DomainViolation(format!("quantile level {q} outside (0, 1)")));
        }
        if i >= self.dim {
            return Err(Error::DimensionMismatch { context: "marginal coordinate", expected: self.dim, found: i });
        }
        let span = |sign: f64| {
            self.components
                .iter()
                .map(|c| c.mean[i] + sign * 40.0 * c.cov[(i, i)].max(0.0).sqrt())
                .fold(sign * f64::NEG_INFINITY, |a, b| if sign > 0.0 { a.max(b) } else { a.min(b) })
        };
        let (mut lo, mut hi) = (span(-1.0), span(1.0));
        if lo == hi {
            return Ok(lo);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.marginal_cdf(i, mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Weight, mean and covariance of the single Gaussian matching the first
/// two moments of the given components. Returns the normalized moments; the
/// combined weight is the sum of the inputs' weights.
pub fn moment_match<'a>(comps: impl Iterator<Item = &'a Component> + Clone) -> (DVector<f64>, DMatrix<f64>) {
    let total: f64 = comps.clone().map(|c| c.weight).sum();
    let first = comps.clone().next().expect("moment_match on empty set");
    let dim = first.mean.len();
    let mut mean = DVector::zeros(dim);
    for c in comps.clone() {
        mean.axpy(c.weight / total, &c.mean, 1.0);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for c in comps {
        let w = c.weight / total;
        cov.zip_apply(&c.cov, |a, b| *a += w * b);
        let d = &c.mean - &mean;
        cov.ger(w, &d, &d, 1.0);
    }
    (mean, cov)
}

fn pack_lower(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn unpack_lower(v: &[f64], n: usize, symmetric: bool) -> Result<DMatrix<f64>> {
    if v.len() != n * (n + 1) / 2 {
        return Err(Error::DimensionMismatch { context: "packed triangle", expected: n * (n + 1) / 2, found: v.len() });
    }
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            m[(i, j)] = v[k];
            if symmetric {
                m[(j, i)] = v[k];
            }
            k += 1;
        }
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct ComponentJson {
    weight: f64,
    mean: Vec<f64>,
    /// Row-major lower triangle of the covariance.
    cov_lower: Vec<f64>,
    /// Row-major lower triangle of its Cholesky factor.
    chol_lower: Vec<f64>,
    jitter: f64,
}

#[derive(Serialize, Deserialize)]
struct MixtureJson {
    dim: usize,
    components: Vec<ComponentJson>,
}

impl Serialize for GaussianMixture {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let components = self
            .components
            .iter()
            .map(|c| {
                let (chol_lower, jitter) = match cholesky(&c.cov, 0.0) {
                    Ok(f) => (pack_lower(&f.l), f.jitter_used),
                    Err(_) => (Vec::new(), f64::NAN),
                };
                ComponentJson {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    cov_lower: pack_lower(&c.cov),
                    chol_lower,
                    jitter: if jitter.is_finite() { jitter } else { -1.0 },
                }
            })
            .collect();
        MixtureJson { dim: self.dim, components }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianMixture {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = MixtureJson::deserialize(d)?;
        let mut components = Vec::with_capacity(raw.components.len());
        for c in raw.components {
            if c.mean.len() != raw.dim {
                return Err(D::Error::custom("mean length does not match dim"));
            }
            let cov = unpack_lower(&c.cov_lower, raw.dim, true).map_err(D::Error::custom)?;
            components.push(Component { weight: c.weight, mean: DVector::from_vec(c.mean), cov });
        }
        Ok(Self { components, dim: raw.dim })
    }
}
