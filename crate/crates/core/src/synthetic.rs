//! Randomized fixtures with known structure, for property checks and
//! benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::gmm::GaussianMixture;
use crate::koh::{KohData, KohModelState, ModelPriors, ModelSpec, NoiseModel, PosteriorSample, Prior, SimRowMean};
use crate::linalg::{symmetrize, KernelSpec};

/// Sizes of a random calibration problem with one design input and one
/// calibration parameter on the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomKohSize {
    pub n_field: usize,
    pub m_sim: usize,
    pub n_pred: usize,
    pub n_cand: usize,
    pub outputs: usize,
}

/// A model state holding one posterior sample, drawn hyperparameters and
/// smooth random responses, together with distinct candidate points.
pub fn random_koh_state<R: Rng>(size: RandomKohSize, rng: &mut R) -> Result<(KohModelState, Vec<Vec<f64>>)> {
    let p = size.outputs;
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let theta = u(0.2, 0.8);
    let (a, b) = (u(1.0, 3.0), u(0.0, 6.0));
    let f = |x: f64, t: f64, k: usize| (a * x + b * t + k as f64).sin() + 0.5 * t * x;
    let mut pts = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| vec![u(0.0, 1.0)]).collect() };
    let x_field = pts(size.n_field);
    let x_sim = pts(size.m_sim);
    let prediction_grid = pts(size.n_pred);
    let candidates = pts(size.n_cand);
    let t_sim: Vec<Vec<f64>> = (0..size.m_sim).map(|_| vec![u(0.0, 1.0)]).collect();
    let shift = u(-0.3, 0.3);
    let y_field = x_field.iter().map(|x| (0..p).map(|k| f(x[0], theta, k) + shift * x[0]).collect()).collect();
    let y_sim = x_sim.iter().zip(&t_sim).map(|(x, t)| (0..p).map(|k| f(x[0], t[0], k)).collect()).collect();
    let data = KohData { x_field, y_field, x_sim, t_sim, y_sim };

    let ls1 = vec![u(0.1, 0.35), u(0.1, 0.35)];
    let ls2 = vec![u(0.2, 0.5)];
    let (phi1, phi2) = if p == 1 {
        (KernelSpec::rbf(ls1, u(0.5, 2.0)), KernelSpec::rbf(ls2, u(0.05, 0.3)))
    } else {
        (KernelSpec::kronecker(ls1, random_spd(p, 0.5, 2.0, rng)), KernelSpec::kronecker(ls2, random_spd(p, 0.05, 0.3, rng)))
    };
    let sigma2 = vec![rng.random_range(1e-3..1e-2)];
    let spec = ModelSpec {
        phi1_template: phi1.clone(),
        phi2_template: phi2.clone(),
        priors: ModelPriors::with_defaults(vec![Prior::Uniform { lo: 0.0, hi: 1.0 }], &phi1, &phi2, 1),
        noise: NoiseModel::Shared,
        sim_mean: SimRowMean::Emulator,
        stage1_nugget: 1e-4,
    };
    let mut state = KohModelState::new(data, phi1, spec, prediction_grid, vec![(0.0, 1.0)])?;
    state.posterior = vec![PosteriorSample { theta: vec![theta], phi2, sigma2 }];
    Ok((state, candidates))
}

/// Symmetric positive definite matrix with eigenvalues drawn from `[lo, hi]`
/// and a random orthogonal basis.
pub fn random_spd<R: Rng>(n: usize, lo: f64, hi: f64, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(lo..=hi)));
    let mut m = &q * d * q.transpose();
    symmetrize(&mut m);
    m
}

/// Equal-weight mixture of `j` components in `dim` dimensions with spread
/// means and random covariances.
pub fn random_mixture<R: Rng>(j: usize, dim: usize, rng: &mut R) -> Result<GaussianMixture> {
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let parts = raw
        .into_iter()
        .map(|w| {
            let mean = DVector::from_fn(dim, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            (w / total, mean, random_spd(dim, 0.1, 1.0, rng))
        })
        .collect();
    GaussianMixture::new(parts)
}

/// Latent-variable Gaussian pair with known mutual information.
///
/// A latent `z ~ N(0, 1)` picks the component mean `(a z, a z)`; each
/// component has covariance `(1 − a²) I`. Marginally the pair is a standard
/// bivariate normal with correlation `ρ = a²`, so the mutual information is
/// `−½ ln(1 − ρ²)`. Sampling `z` gives an inner mixture of any size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentGaussianPair {
    pub rho: f64,
}

impl LatentGaussianPair {
    pub fn true_mi(&self) -> f64 {
        -0.5 * (1.0 - self.rho * self.rho).ln()
    }

    pub fn component<R: Rng>(&self, rng: &mut R) -> (DVector<f64>, DMatrix<f64>) {
        let a = self.rho.sqrt();
        let z: f64 = rng.sample(StandardNormal);
        (DVector::from_element(2, a * z), DMatrix::identity(2, 2) * (1.0 - self.rho))
    }

    /// The pair as one bivariate Gaussian.
    pub fn joint(&self) -> Result<GaussianMixture> {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, self.rho, self.rho, 1.0]);
        GaussianMixture::new(vec![(1.0, DVector::zeros(2), cov)])
    }

    /// Equal-weight mixture of `j` sampled components.
    pub fn mixture<R: Rng>(&self, j: usize, rng: &mut R) -> Result<GaussianMixture> {
        let parts = (0..j)
            .map(|_| {
                let (m, c) = self.component(rng);
                (1.0 / j as f64, m, c)
            })
            .collect();
        GaussianMixture::new(parts)
    }
}
