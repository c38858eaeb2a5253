use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mixture::{moment_match, Component, GaussianMixture};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, CholFactor};
use crate::rng::{self, tag};

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionConfig {
    pub j0: usize,
    pub j_target: usize,
    pub nn_k: usize,
    pub refresh_r: usize,
    pub seed: u64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { j0: 200, j_target: 30, nn_k: 10, refresh_r: 25, seed: 0 }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.j_target == 0 || self.nn_k == 0 || self.refresh_r == 0 || self.j_target > self.j0 {
            return Err(Error::InvalidConfig(format!("compression config {self:?}")));
        }
        Ok(())
    }
}

/// Means of a mixture in the coordinates of its global covariance.
#[derive(Clone, Debug)]
pub struct Whitening {
    /// Column `j` is `L⁻¹ (μ_j − μ̄)`.
    pub u: DMatrix<f64>,
    pub factor: CholFactor,
    pub center: DVector<f64>,
}

impl Whitening {
    pub fn coords(&self, j: usize) -> DVector<f64> {
        self.u.column(j).into_owned()
    }
}

fn whiten_components(comps: &[&Component]) -> Result<Whitening> {
    if comps.is_empty() {
        return Err(Error::EmptyInput("mixture components"));
    }
    let (center, avg) = moment_match(comps.iter().copied());
    let factor = cholesky(&avg, 0.0)?;
    let mut u = DMatrix::zeros(center.len(), comps.len());
    for (j, c) in comps.iter().enumerate() {
        u.set_column(j, &(&c.mean - &center));
    }
    let u = factor.whiten_mat(&u);
    Ok(Whitening { u, factor, center })
}

/// Whitens component means with the Cholesky factor of `E[Σ_j] + Cov(μ_j)`.
pub fn whiten(mix: &GaussianMixture) -> Result<Whitening> {
    whiten_components(&mix.components.iter().collect::<Vec<_>>())
}

/// A reduced mixture together with the original components behind each
/// output component.
#[derive(Clone, Debug)]
pub struct Reduction {
    pub mixture: GaussianMixture,
    pub groups: Vec<Vec<usize>>,
    pub iterations: usize,
}

fn collapse(mix: &GaussianMixture, groups: Vec<Vec<usize>>) -> Result<(GaussianMixture, Vec<Vec<usize>>)> {
    let mut comps = Vec::with_capacity(groups.len());
    for g in &groups {
        let members = g.iter().map(|&i| &mix.components[i]);
        let weight: f64 = members.clone().map(|c| c.weight).sum();
        let (mean, cov) = moment_match(members);
        comps.push(Component { weight, mean, cov });
    }
    let dim = mix.dim;
    Ok((GaussianMixture { components: comps, dim }, groups))
}

fn sq_dists(u: &DMatrix<f64>, centers: &DMatrix<f64>) -> DMatrix<f64> {
    let un: Vec<f64> = u.column_iter().map(|c| c.norm_squared()).collect();
    let cn: Vec<f64> = centers.column_iter().map(|c| c.norm_squared()).collect();
    let mut g = u.transpose() * centers;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            g[(i, j)] = (un[i] + cn[j] - 2.0 * g[(i, j)]).max(0.0);
        }
    }
    g
}

fn argmin_row(d: &DMatrix<f64>, i: usize) -> usize {
    let mut best = 0;
    for j in 1..d.ncols() {
        if d[(i, j)] < d[(i, best)] {
            best = j;
        }
    }
    best
}

/// Weighted k-means (k-means++ seeding) in whitened coordinates, followed
/// by moment matching inside each cluster.
pub fn kmeans_reduce(mix: &GaussianMixture, w: &Whitening, j0: usize, seed: u64) -> Result<Reduction> {
    let n = mix.len();
    if j0 == 0 || j0 > n {
        return Err(Error::InvalidConfig(format!("k-means target {j0} for {n} components")));
    }
    if j0 == n {
        let (mixture, groups) = collapse(mix, (0..n).map(|i| vec![i]).collect())?;
        return Ok(Reduction { mixture, groups, iterations: 0 });
    }
    let weights: Vec<f64> = mix.components.iter().map(|c| c.weight).collect();
    let mut rng = rng::stream(seed, &[tag::KMEANS]);
    let dim = w.u.nrows();

    let pick = |rng: &mut rng::Rng, score: &[f64], taken: &[bool]| -> usize {
        let total: f64 = score.iter().zip(taken).filter(|(_, t)| !**t).map(|(s, _)| s).sum();
        if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            for (i, s) in score.iter().enumerate() {
                if taken[i] {
                    continue;
                }
                r -= s;
                if r < 0.0 {
                    return i;
                }
            }
        }
        (0..score.len()).rev().find(|&i| !taken[i] && score[i] > 0.0).or_else(|| taken.iter().position(|t| !t)).unwrap()
    };

    let mut taken = vec![false; n];
    let mut chosen = vec![pick(&mut rng, &weights, &taken)];
    taken[chosen[0]] = true;
    let mut best = vec![f64::INFINITY; n];
    while chosen.len() < j0 {
        let last = w.u.column(*chosen.last().unwrap());
        for i in 0..n {
            let d = (w.u.column(i) - last).norm_squared();
            best[i] = best[i].min(d);
        }
        let score: Vec<f64> = (0..n).map(|i| weights[i] * best[i]).collect();
        let next = pick(&mut rng, &score, &taken);
        taken[next] = true;
        chosen.push(next);
    }
    let mut centers = DMatrix::zeros(dim, j0);
    for (k, &i) in chosen.iter().enumerate() {
        centers.set_column(k, &w.u.column(i));
    }

    let mut assign = vec![0usize; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let d = sq_dists(&w.u, &centers);
        for i in 0..n {
            assign[i] = argmin_row(&d, i);
        }
        let mut sums = DMatrix::zeros(dim, j0);
        let mut mass = vec![0.0; j0];
        let mut count = vec![0usize; j0];
        for i in 0..n {
            let k = assign[i];
            sums.column_mut(k).axpy(weights[i], &w.u.column(i), 1.0);
            mass[k] += weights[i];
            count[k] += 1;
        }
        let mut moved = 0.0_f64;
        let mut reseeded = false;
        for k in 0..j0 {
            if count[k] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| d[(a, assign[a])].partial_cmp(&d[(b, assign[b])]).unwrap().then(b.cmp(&a)))
                    .unwrap();
                centers.set_column(k, &w.u.column(far));
                assign[far] = k;
                reseeded = true;
                moved = f64::INFINITY;
                continue;
            }
            let new = if mass[k] > 0.0 { sums.column(k) / mass[k] } else { centers.column(k).into_owned() };
            moved = moved.max((&new - centers.column(k)).norm());
            centers.set_column(k, &new);
        }
        if (!reseeded && moved < KMEANS_TOL) || iterations >= KMEANS_MAX_ITER {
            break;
        }
    }
    let d = sq_dists(&w.u, &centers);
    for i in 0..n {
        assign[i] = argmin_row(&d, i);
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); j0];
    for (i, &k) in assign.iter().enumerate() {
        groups[k].push(i);
    }
    // A cluster can only end up empty if the iteration cap hit right after a
    // reseed; give it the member farthest from its center within the largest cluster.
    while let Some(e) = groups.iter().position(Vec::is_empty) {
        let donor = (0..j0).max_by_key(|&k| (groups[k].len(), std::cmp::Reverse(k))).unwrap();
        let far = *groups[donor]
            .iter()
            .max_by(|&&a, &&b| d[(a, donor)].partial_cmp(&d[(b, donor)]).unwrap().then(b.cmp(&a)))
            .unwrap();
        groups[donor].retain(|&i| i != far);
        groups[e].push(far);
    }
    let (mixture, groups) = collapse(mix, groups)?;
    Ok(Reduction { mixture, groups, iterations })
}

fn merged(a: &Component, b: &Component) -> Component {
    let weight = a.weight + b.weight;
    let (mean, cov) = moment_match([a, b].into_iter());
    Component { weight, mean, cov }
}

fn cost_with(a: &Component, b: &Component, ld_a: f64, ld_b: f64) -> Result<f64> {
    let m = merged(a, b);
    let ld = cholesky(&m.cov, 0.0)?.logdet();
    Ok(0.5 * ((a.weight + b.weight) * ld - a.weight * ld_a - b.weight * ld_b))
}

/// Runnalls merge cost of components `i` and `j`.
pub fn merge_cost(i: usize, j: usize, mix: &GaussianMixture) -> Result<f64> {
    if i == j {
        return Err(Error::InvalidConfig("merge_cost needs two distinct components".into()));
    }
    let (a, b) = (&mix.components[i], &mix.components[j]);
    cost_with(a, b, cholesky(&a.cov, 0.0)?.logdet(), cholesky(&b.cov, 0.0)?.logdet())
}

/// Instrumentation gathered during one compression.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub kmeans_iterations: usize,
    pub merges: usize,
    /// Merge-cost evaluations made while rebuilding the neighbor graph, one
    /// entry per rebuild.
    pub sweep_evaluations: Vec<usize>,
    /// Evaluations for pairs created by individual merges between rebuilds.
    pub incremental_evaluations: usize,
    /// Every merged pair, as (slot, slot) with the smaller slot first.
    pub merged_pairs: Vec<(usize, usize)>,
    /// Whether each merged pair was in the current neighbor lists.
    pub merged_within_knn: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Compressed {
    pub mixture: GaussianMixture,
    /// Original component indices behind each output component.
    pub groups: Vec<Vec<usize>>,
    pub stats: CompressionStats,
}

struct Slot {
    comp: Component,
    logdet: f64,
    group: Vec<usize>,
}

pub fn compress(mix: &GaussianMixture, cfg: &CompressionConfig) -> Result<GaussianMixture> {
    Ok(compress_detailed(mix, cfg, |_| {})?.mixture)
}

/// Whitening, k-means reduction to `j0`, then greedy Runnalls merges over
/// nearest-neighbor pairs down to `j_target`. `observe` sees the working
/// component set after the k-means stage and after every merge.
pub fn compress_detailed(
    mix: &GaussianMixture,
    cfg: &CompressionConfig,
    mut observe: impl FnMut(&[&Component]),
) -> Result<Compressed> {
    cfg.validate()?;
    let j0 = cfg.j0.min(mix.len());
    let target = cfg.j_target.min(j0);
    let w = whiten(mix)?;
    let red = kmeans_reduce(mix, &w, j0, cfg.seed)?;
    let mut stats = CompressionStats { kmeans_iterations: red.iterations, ..Default::default() };

    let logdets: Vec<f64> = red
        .mixture
        .components
        .par_iter()
        .map(|c| cholesky(&c.cov, 0.0).map(|f| f.logdet()))
        .collect::<Result<_>>()?;
    let mut slots: Vec<Option<Slot>> = red
        .mixture
        .components
        .into_iter()
        .zip(logdets)
        .zip(red.groups)
        .map(|((comp, logdet), group)| Some(Slot { comp, logdet, group }))
        .collect();
    observe(&slots.iter().flatten().map(|s| &s.comp).collect::<Vec<_>>());

    let mut active = slots.len();
    let mut nbrs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); slots.len()];
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut since_refresh = cfg.refresh_r;

    let eval_pairs = |slots: &[Option<Slot>], todo: Vec<(usize, usize)>| -> Result<Vec<((usize, usize), f64)>> {
        todo.into_par_iter()
            .map(|(a, b)| {
                let (sa, sb) = (slots[a].as_ref().unwrap(), slots[b].as_ref().unwrap());
                cost_with(&sa.comp, &sb.comp, sa.logdet, sb.logdet).map(|c| ((a, b), c))
            })
            .collect()
    };

    while active > target {
        if since_refresh >= cfg.refresh_r {
            since_refresh = 0;
            let ids: Vec<usize> = (0..slots.len()).filter(|&i| slots[i].is_some()).collect();
            let comps: Vec<&Component> = ids.iter().map(|&i| &slots[i].as_ref().unwrap().comp).collect();
            let wh = whiten_components(&comps)?;
            let d = sq_dists(&wh.u, &wh.u);
            let k = cfg.nn_k.min(ids.len() - 1);
            for n in nbrs.iter_mut() {
                n.clear();
            }
            for (a, &ia) in ids.iter().enumerate() {
                let mut order: Vec<usize> = (0..ids.len()).filter(|&b| b != a).collect();
                order.sort_by(|&x, &y| d[(a, x)].partial_cmp(&d[(a, y)]).unwrap().then(x.cmp(&y)));
                nbrs[ia] = order[..k].iter().map(|&b| ids[b]).collect();
            }
            let mut todo = BTreeSet::new();
            for &ia in &ids {
                for &ib in &nbrs[ia] {
                    todo.insert((ia.min(ib), ia.max(ib)));
                }
            }
            stats.sweep_evaluations.push(todo.len());
            pairs = eval_pairs(&slots, todo.into_iter().collect())?.into_iter().collect();
        }

        let (&(a, b), _) = pairs
            .iter()
            .fold(None::<(&(usize, usize), &f64)>, |best, cur| match best {
                Some(bst) if bst.1 <= cur.1 => Some(bst),
                _ => Some(cur),
            })
            .ok_or_else(|| Error::NumericalFailure { context: "mixture merge: no candidate pairs".into(), candidate: None })?;
        stats.merged_within_knn.push(nbrs[a].contains(&b) || nbrs[b].contains(&a));
        stats.merged_pairs.push((a, b));

        let sb = slots[b].take().unwrap();
        let sa = slots[a].take().unwrap();
        let comp = merged(&sa.comp, &sb.comp);
        let logdet = cholesky(&comp.cov, 0.0)?.logdet();
        let mut group = sa.group;
        group.extend(sb.group);
        slots[a] = Some(Slot { comp, logdet, group });
        active -= 1;
        stats.merges += 1;
        since_refresh += 1;

        let mut joined: BTreeSet<usize> = nbrs[a].union(&nbrs[b]).copied().collect();
        joined.remove(&a);
        joined.remove(&b);
        nbrs[b].clear();
        for (x, n) in nbrs.iter_mut().enumerate() {
            if x != a && (n.remove(&b) | n.contains(&a)) {
                n.insert(a);
                joined.insert(x);
            }
        }
        nbrs[a] = joined.iter().copied().filter(|&x| slots[x].is_some()).collect();
        pairs.retain(|&(x, y), _| x != a && y != a && x != b && y != b);
        let todo: Vec<(usize, usize)> = nbrs[a].iter().map(|&x| (a.min(x), a.max(x))).collect();
        stats.incremental_evaluations += todo.len();
        pairs.extend(eval_pairs(&slots, todo)?);

        observe(&slots.iter().flatten().map(|s| &s.comp).collect::<Vec<_>>());
    }

    let mut comps = Vec::with_capacity(active);
    let mut groups = Vec::with_capacity(active);
    for s in slots.into_iter().flatten() {
        comps.push(s.comp);
        groups.push(s.group);
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= total;
    }
    Ok(Compressed { mixture: GaussianMixture { components: comps, dim: mix.dim }, groups, stats })
}
