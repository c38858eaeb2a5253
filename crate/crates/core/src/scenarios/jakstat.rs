use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interp::Interpolant;
use crate::error::{Error, Result};
use crate::koh::Prior;
use crate::rng::{self, tag};

pub const TIME_WINDOW: (f64, f64) = (0.0, 60.0);
pub const MAX_STEP: f64 = 0.05;
pub const PULSE_HALF_LIFE: f64 = 15.0;
/// Order of θ: p1, p3, p4, p5, p6, v1(0).
pub const PARAM_NAMES: [&str; 6] = ["p1", "p3", "p4", "p5", "p6", "v1_0"];
pub const REFERENCE: [f64; 6] = [2.43, 0.256, 0.303, 1.27, 0.944, 0.996];
pub const PRIOR_BOX: [(f64, f64); 6] = [(2.1, 2.8), (0.1, 0.4), (0.1, 0.4), (1.0, 1.5), (0.7, 1.4), (0.8, 1.1)];
/// Observation times of the bundled field series.
pub const FIELD_TIMES: [f64; 19] =
    [0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0, 60.0];
pub const SYNTHETIC_NOISE_SD: f64 = 0.02;
pub const BUNDLED_CSV: &str = include_str!("../../data/jakstat_field.csv");

pub fn theta_priors() -> Vec<Prior> {
    PRIOR_BOX.iter().map(|&(lo, hi)| Prior::Uniform { lo, hi }).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JakParams {
    pub p1: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
    pub p6: f64,
    pub v1_0: f64,
}

impl JakParams {
    pub fn from_theta(theta: &[f64]) -> Result<Self> {
        if theta.len() != 6 {
            return Err(Error::DimensionMismatch { context: "JAK-STAT5 parameters", expected: 6, found: theta.len() });
        }
        Ok(Self { p1: theta[0], p3: theta[1], p4: theta[2], p5: theta[3], p6: theta[4], v1_0: theta[5] })
    }

    pub fn reference() -> Self {
        Self::from_theta(&REFERENCE).unwrap()
    }

    pub fn initial_state(&self) -> [f64; 4] {
        [self.v1_0, 0.0, 0.0, 0.0]
    }
}

pub fn jakstat_rhs(v: &[f64], d: f64, p: &JakParams) -> [f64; 4] {
    [
        -p.p1 * v[0] * d + 2.0 * p.p4 * v[3],
        p.p1 * v[0] * d - v[1] * v[1],
        -p.p3 * v[2] + 0.5 * v[1] * v[1],
        p.p3 * v[2] - p.p4 * v[3],
    ]
}

/// Classical fourth-order Runge–Kutta. Each grid interval is split into the
/// fewest equal steps no longer than `max_step`. Returns the state at every
/// grid time.
pub fn rk4_integrate<F>(rhs: F, v0: &[f64], t_grid: &[f64], max_step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::DomainViolation("integration grid must be strictly increasing".into()));
    }
    let axpy = |y: &[f64], h: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + h * b).collect() };
    let mut y = v0.to_vec();
    let mut out = Vec::with_capacity(t_grid.len());
    if t_grid.is_empty() {
        return Ok(out);
    }
    out.push(y.clone());
    for w in t_grid.windows(2) {
        let n = ((w[1] - w[0]) / max_step - 1e-9).ceil().max(1.0) as usize;
        let h = (w[1] - w[0]) / n as f64;
        for s in 0..n {
            let t = w[0] + s as f64 * h;
            let k1 = rhs(t, &y);
            let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
            let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
            let k4 = rhs(t + h, &axpy(&y, h, &k3));
            for i in 0..y.len() {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationBlowup { time: t + h });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

pub fn jakstat_observe(trajectory: &[Vec<f64>], p5: f64, p6: f64) -> Vec<[f64; 2]> {
    trajectory
        .iter()
        .map(|v| [p5 * (v[0] + v[1] + 2.0 * v[2]), p6 * (v[1] + 2.0 * v[2])])
        .collect()
}

/// Observables at increasing `times`, integrating from `TIME_WINDOW.0`.
pub fn simulate(theta: &[f64], times: &[f64], input: &Interpolant) -> Result<Vec<[f64; 2]>> {
    let p = JakParams::from_theta(theta)?;
    let start = TIME_WINDOW.0;
    let mut grid = vec![start];
    grid.extend(times.iter().copied().filter(|&t| t > start));
    let traj = rk4_integrate(|t, v| jakstat_rhs(v, input.eval(t), &p).to_vec(), &p.initial_state(), &grid, MAX_STEP)?;
    let obs = jakstat_observe(&traj, p.p5, p.p6);
    let skip = grid.len() - times.len();
    Ok(obs[skip..].to_vec())
}

/// Single-time simulator runs, one per `(time, θ)` pair, in parallel.
pub fn simulate_runs(times: &[f64], thetas: &[Vec<f64>], input: &Interpolant) -> Result<Vec<Vec<f64>>> {
    times
        .par_iter()
        .zip(thetas)
        .map(|(&t, th)| simulate(th, &[t], input).map(|o| o[0].to_vec()))
        .collect()
}

/// Exponentially decaying pulse starting at time zero.
pub fn pulse_input(half_life: f64) -> Interpolant {
    let ts: Vec<f64> = (0..=600).map(|i| i as f64 * 0.1).collect();
    let ds: Vec<f64> = ts.iter().map(|t| (-std::f64::consts::LN_2 * t / half_life).exp()).collect();
    Interpolant::linear(&ts, &ds).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub time: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub x1: f64,
    pub x2: f64,
}

pub fn read_field_csv<R: Read>(reader: R) -> Result<Vec<FieldRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<FieldRecord>, _>>()?;
    if rows.len() < 2 {
        return Err(Error::EmptyInput("at least two field observations"));
    }
    if rows.windows(2).any(|w| !(w[1].time > w[0].time)) {
        return Err(Error::DomainViolation("field times must be strictly increasing".into()));
    }
    Ok(rows)
}

pub fn write_field_csv<W: std::io::Write>(rows: &[FieldRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Field records from a file, the bundled series when `path` is `None`, or
/// a freshly generated synthetic series when the file does not exist.
pub fn load_field(path: Option<&Path>, seed: u64) -> Result<Vec<FieldRecord>> {
    match path {
        None => read_field_csv(BUNDLED_CSV.as_bytes()),
        Some(p) if p.exists() => read_field_csv(std::fs::File::open(p)?),
        Some(p) => {
            log::warn!("field data {} not found, using the synthetic pulse series", p.display());
            synthetic_field(seed)
        }
    }
}

/// Interpolant of the cytokine input column.
pub fn input_series(rows: &[FieldRecord]) -> Result<Interpolant> {
    let t: Vec<f64> = rows.iter().map(|r| r.time).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.d).collect();
    Interpolant::linear(&t, &d)
}

/// Smooth systematic departure of the synthetic process from the ODE.
pub fn synthetic_discrepancy(t: f64) -> [f64; 2] {
    let s = t / TIME_WINDOW.1;
    [0.06 * s - 0.04 * (std::f64::consts::PI * s).sin(), -0.05 * (std::f64::consts::PI * s).sin()]
}

/// Synthetic field series: the ODE at the reference parameters driven by the
/// pulse input, plus `synthetic_discrepancy` and Gaussian noise.
pub fn synthetic_field(seed: u64) -> Result<Vec<FieldRecord>> {
    let input = pulse_input(PULSE_HALF_LIFE);
    let obs = simulate(&REFERENCE, &FIELD_TIMES, &input)?;
    let mut rng = rng::stream(seed, &[tag::FIELD_NOISE]);
    Ok(FIELD_TIMES
        .iter()
        .zip(obs)
        .map(|(&t, o)| {
            let dlt = synthetic_discrepancy(t);
            let mut noisy = |k: usize| o[k] + dlt[k] + SYNTHETIC_NOISE_SD * rng.sample::<f64, _>(StandardNormal);
            let (x1, x2) = (noisy(0), noisy(1));
            FieldRecord { time: t, d: input.eval(t), x1, x2 }
        })
        .collect())
}
