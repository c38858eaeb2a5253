use rand::seq::SliceRandom;

use crate::rng::{self, tag};

/// Default number of random Latin hypercubes compared by `maximin_lhd`.
pub const DEFAULT_RESTARTS: usize = 100;

/// A centered Latin hypercube with its minimum pairwise distance, measured
/// in unit-cube coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Lhd {
    pub points: Vec<Vec<f64>>,
    pub min_distance: f64,
}

fn scaled_min_distance(unit: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..unit.len() {
        for j in 0..i {
            let d: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| (a - b).powi(2)).sum();
            best = best.min(d.sqrt());
        }
    }
    best
}

fn draw_unit(n: usize, d: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        for (i, p) in pts.iter_mut().enumerate() {
            p[k] = (perm[i] as f64 + 0.5) / n as f64;
        }
    }
    pts
}

fn to_box(unit: Vec<Vec<f64>>, bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    unit.into_iter()
        .map(|p| p.iter().zip(bounds).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect())
        .collect()
}

/// One random centered Latin hypercube (the first candidate `maximin_lhd`
/// considers under the same seed).
pub fn random_lhd(n: usize, bounds: &[(f64, f64)], seed: u64) -> Lhd {
    maximin_lhd(n, bounds, 1, seed)
}

/// Best of `restarts` random centered Latin hypercubes by minimum distance.
pub fn maximin_lhd(n: usize, bounds: &[(f64, f64)], restarts: usize, seed: u64) -> Lhd {
    let mut rng = rng::stream(seed, &[tag::LHD]);
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let unit = draw_unit(n, bounds.len(), &mut rng);
        let md = scaled_min_distance(&unit);
        if best.as_ref().is_none_or(|(_, b)| md > *b) {
            best = Some((unit, md));
        }
    }
    let (unit, min_distance) = best.unwrap();
    Lhd { points: to_box(unit, bounds), min_distance }
}
