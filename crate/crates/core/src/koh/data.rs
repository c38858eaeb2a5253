use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field and simulator observations.
///
/// Rows of `y_field` / `y_sim` hold one value per output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KohData {
    pub x_field: Vec<Vec<f64>>,
    pub y_field: Vec<Vec<f64>>,
    pub x_sim: Vec<Vec<f64>>,
    pub t_sim: Vec<Vec<f64>>,
    pub y_sim: Vec<Vec<f64>>,
}

impl KohData {
    pub fn n_field(&self) -> usize {
        self.x_field.len()
    }

    pub fn n_sim(&self) -> usize {
        self.x_sim.len()
    }

    pub fn design_dim(&self) -> usize {
        self.x_sim.first().map_or(0, Vec::len)
    }

    pub fn calib_dim(&self) -> usize {
        self.t_sim.first().map_or(0, Vec::len)
    }

    pub fn n_outputs(&self) -> usize {
        self.y_sim.first().map_or(1, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_field.is_empty() {
            return Err(Error::EmptyInput("field data"));
        }
        if self.x_sim.is_empty() {
            return Err(Error::EmptyInput("simulator data"));
        }
        let (d, h, p) = (self.design_dim(), self.calib_dim(), self.n_outputs());
        let check = |context: &'static str, rows: &[Vec<f64>], count: usize, width: usize| -> Result<()> {
            if rows.len() != count {
                return Err(Error::DimensionMismatch { context, expected: count, found: rows.len() });
            }
            for r in rows {
                if r.len() != width {
                    return Err(Error::DimensionMismatch { context, expected: width, found: r.len() });
                }
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(Error::DomainViolation(format!("non-finite entry in {context}")));
                }
            }
            Ok(())
        };
        let (n, m) = (self.n_field(), self.n_sim());
        check("x_field", &self.x_field, n, d)?;
        check("y_field", &self.y_field, n, p)?;
        check("x_sim", &self.x_sim, m, d)?;
        check("t_sim", &self.t_sim, m, h)?;
        check("y_sim", &self.y_sim, m, p)?;
        Ok(())
    }
}

/// Prior on one unconstrained coordinate.
///
/// `LogNormal` describes a positive parameter whose logarithm is the sampled
/// coordinate, so its density on that coordinate is normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Normal { mu: f64, sigma: f64 },
}

impl Prior {
    pub fn log_density(&self, z: f64) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => {
                if z < lo || z > hi {
                    f64::NEG_INFINITY
                } else if hi > lo {
                    -(hi - lo).ln()
                } else {
                    0.0
                }
            }
            Prior::LogNormal { mu, sigma } | Prior::Normal { mu, sigma } => {
                let r = (z - mu) / sigma;
                -0.5 * r * r - sigma.ln() - 0.5 * crate::linalg::LN_2PI
            }
        }
    }

    /// A central starting point on the unconstrained coordinate.
    pub fn center(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => 0.5 * (lo + hi),
            Prior::LogNormal { mu, .. } | Prior::Normal { mu, .. } => mu,
        }
    }

    /// Spread used to size the initial random-walk step.
    pub fn width(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => hi - lo,
            Prior::LogNormal { sigma, .. } | Prior::Normal { sigma, .. } => sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && hi >= lo,
            Prior::LogNormal { mu, sigma } | Prior::Normal { mu, sigma } => mu.is_finite() && sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("improper prior {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_prior_support() {
        let p = Prior::Uniform { lo: 1.0, hi: 3.0 };
        assert_eq!(p.log_density(2.0), -(2.0_f64).ln());
        assert_eq!(p.log_density(3.5), f64::NEG_INFINITY);
        let point = Prior::Uniform { lo: 1.0, hi: 1.0 };
        assert_eq!(point.log_density(1.0), 0.0);
    }

    #[test]
    fn lognormal_is_normal_on_log_scale() {
        let p = Prior::LogNormal { mu: 0.0, sigma: 1.0 };
        assert!((p.log_density(0.0) + 0.918_938_533_204_672_7).abs() < 1e-12);
    }
}
