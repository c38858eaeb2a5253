use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const SHIFT: f64 = 2.2;
pub const TRUE_SHAPE: f64 = 1.8;
pub const TRUE_RATE: f64 = 2.0;
pub const DOMAIN: (f64, f64) = (-2.0, 8.0);
pub const NOISE_VAR: f64 = 1e-3;
pub const T1_BOX: (f64, f64) = (0.8, 2.6);
pub const T2_BOX: (f64, f64) = (1.0, 3.5);

/// Gamma density with shape `a` and rate `l`.
pub fn gamma_density(z: f64, a: f64, l: f64) -> f64 {
    (a * l.ln() + (a - 1.0) * z.ln() - l * z - ln_gamma(a)).exp()
}

pub fn toy_sim(x: f64, t1: f64, t2: f64) -> Result<f64> {
    let z = x + SHIFT;
    if !(z > 0.0) || !(t1 > 0.0) || !(t2 > 0.0) {
        return Err(Error::DomainViolation(format!("toy simulator at x={x}, t=({t1}, {t2})")));
    }
    Ok(10.0 * gamma_density(z, t1, t2))
}

fn oscillation(x: f64) -> f64 {
    (2.0 * PI * x / 1.5).sin() + 0.3 * (6.0 * PI * x / 5.0).sin()
}

/// Discrepancy between the physical process and the simulator at the true
/// parameters.
pub fn toy_delta(x: f64) -> f64 {
    10.0 * gamma_density(x + SHIFT, TRUE_SHAPE, TRUE_RATE) * oscillation(x)
}

/// Noise-free physical response.
pub fn toy_true_mean(x: f64) -> f64 {
    10.0 * gamma_density(x + SHIFT, TRUE_SHAPE, TRUE_RATE) * (1.0 + oscillation(x))
}

/// Physical response with `N(0, noise_var)` measurement error.
pub fn toy_true<R: Rng>(x: f64, noise_var: f64, rng: &mut R) -> f64 {
    toy_true_mean(x) + noise_var.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

/// `n` cell-centred points on `[lo, hi]`.
pub fn centered_grid(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / n as f64).collect()
}
