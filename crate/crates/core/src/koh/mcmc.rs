//! Adaptive random-walk Metropolis on unconstrained coordinates.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::try_cholesky;
use crate::rng;

const WINDOW: usize = 25;
const STUCK_WINDOWS: usize = 4;
const COV_START: usize = 400;
const COV_EVERY: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chains: usize,
    pub burn_in: usize,
    pub draws: usize,
    /// Initial proposal standard deviation per coordinate. `None` derives
    /// them from the prior widths.
    pub step_scales: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { chains: 1, burn_in: 2000, draws: 1000, step_scales: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct McmcRun {
    pub draws: Vec<Vec<f64>>,
    pub log_posteriors: Vec<f64>,
    pub acceptance_rate: f64,
}

struct ChainOut {
    draws: Vec<Vec<f64>>,
    lps: Vec<f64>,
    accepted: usize,
    proposed: usize,
}

/// Runs `cfg.chains` independent chains and concatenates their kept draws.
///
/// Coordinates whose step scale is zero are held fixed. During burn-in the
/// global step size is tuned every 25 iterations towards an acceptance rate
/// of 0.3, and from iteration 400 on the proposal shape follows the empirical
/// covariance of the burn-in history.
pub fn run<F>(logpost: F, init: &[f64], scales: &[f64], cfg: &McmcConfig, tag: u64) -> Result<McmcRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if cfg.draws == 0 || cfg.chains == 0 {
        return Err(Error::InvalidConfig("MCMC needs at least one chain and one draw".into()));
    }
    if init.len() != scales.len() {
        return Err(Error::DimensionMismatch { context: "mcmc scales", expected: init.len(), found: scales.len() });
    }
    let per_chain = cfg.draws.div_ceil(cfg.chains);
    let outs: Vec<Result<ChainOut>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(&logpost, init, scales, cfg.burn_in, per_chain, rng::derive(cfg.seed, &[tag, c as u64])))
        .collect();
    let mut draws = Vec::with_capacity(cfg.draws);
    let mut lps = Vec::with_capacity(cfg.draws);
    let (mut acc, mut prop) = (0, 0);
    for o in outs {
        let o = o?;
        draws.extend(o.draws);
        lps.extend(o.lps);
        acc += o.accepted;
        prop += o.proposed;
    }
    draws.truncate(cfg.draws);
    lps.truncate(cfg.draws);
    Ok(McmcRun {
        draws,
        log_posteriors: lps,
        acceptance_rate: if prop == 0 { 0.0 } else { acc as f64 / prop as f64 },
    })
}

fn run_chain<F>(logpost: &F, init: &[f64], scales: &[f64], burn_in: usize, keep: usize, seed: u64) -> Result<ChainOut>
where
    F: Fn(&[f64]) -> f64,
{
    use rand::SeedableRng;
    let mut rng = rng::Rng::seed_from_u64(seed);
    let active: Vec<usize> = (0..init.len()).filter(|&i| scales[i] > 0.0).collect();
    let d = active.len();
    let mut x = init.to_vec();
    let mut lp = logpost(&x);
    if !lp.is_finite() {
        return Err(Error::MixingFailure {
            diagnostics: format!("initial point {x:?} has log posterior {lp}"),
        });
    }
    let mut step = 1.0_f64;
    let mut shape: Option<DMatrix<f64>> = None;
    let mut history: Vec<Vec<f64>> = Vec::new();
    let (mut win_acc, mut stuck) = (0usize, 0usize);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    let mut out = ChainOut { draws: Vec::with_capacity(keep), lps: Vec::with_capacity(keep), accepted: 0, proposed: 0 };
    let mut eps = vec![0.0; d];
    let mut cand = x.clone();

    for it in 0..(burn_in + keep) {
        if d > 0 {
            for e in eps.iter_mut() {
                *e = rng.sample(StandardNormal);
            }
            cand.copy_from_slice(&x);
            match &shape {
                Some(l) => {
                    for (a, &i) in active.iter().enumerate() {
                        let mut s = 0.0;
                        for b in 0..=a {
                            s += l[(a, b)] * eps[b];
                        }
                        cand[i] += step * s;
                    }
                }
                None => {
                    for (a, &i) in active.iter().enumerate() {
                        cand[i] += step * scales[i] * eps[a];
                    }
                }
            }
            let lp_c = logpost(&cand);
            let u: f64 = rng.random();
            proposed += 1;
            if lp_c.is_finite() && u.ln() < lp_c - lp {
                std::mem::swap(&mut x, &mut cand);
                lp = lp_c;
                accepted += 1;
                win_acc += 1;
            }
        }

        if it < burn_in {
            history.push(x.clone());
            if (it + 1) % WINDOW == 0 && d > 0 {
                let rate = win_acc as f64 / WINDOW as f64;
                if win_acc == 0 {
                    stuck += 1;
                    if stuck >= STUCK_WINDOWS {
                        return Err(Error::MixingFailure {
                            diagnostics: format!(
                                "no proposal accepted in iterations {}..{} of burn-in; step {step:.3e}, log posterior {lp:.6}, state {x:?}",
                                it + 1 - WINDOW * STUCK_WINDOWS,
                                it + 1
                            ),
                        });
                    }
                } else {
                    stuck = 0;
                }
                step *= (2.0 * (rate - 0.3)).exp();
                win_acc = 0;
            }
            if it + 1 >= COV_START && (it + 1) % COV_EVERY == 0 && d > 0 {
                let recent = &history[history.len() / 2..];
                if let Some(l) = proposal_shape(recent, &active, scales) {
                    shape = Some(l);
                    step = 1.0;
                }
            }
        } else {
            out.draws.push(x.clone());
            out.lps.push(lp);
        }
    }
    out.accepted = accepted;
    out.proposed = proposed;
    Ok(out)
}

fn proposal_shape(recent: &[Vec<f64>], active: &[usize], scales: &[f64]) -> Option<DMatrix<f64>> {
    let d = active.len();
    let n = recent.len() as f64;
    if recent.len() < 2 * d + 2 {
        return None;
    }
    let mut mean = vec![0.0; d];
    for r in recent {
        for (a, &i) in active.iter().enumerate() {
            mean[a] += r[i] / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in recent {
        for a in 0..d {
            let da = r[active[a]] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (r[active[b]] - mean[b]) / (n - 1.0);
            }
        }
    }
    let f = 2.38 * 2.38 / d as f64;
    for a in 0..d {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov *= f;
    for a in 0..d {
        let s = scales[active[a]];
        cov[(a, a)] += 1e-6 * s * s;
    }
    try_cholesky(&cov, 0.0)
}
