//! Benchmark scenarios: the one-dimensional Gamma toy problem and the
//! two-output JAK-STAT5 signalling model.
//!
//! A `ScenarioConfig` is declarative (JSON or TOML); `build` turns it into
//! data, model structure, candidate and prediction grids, the truth vector on
//! the grid, and a responder that plays the physical process.

pub mod interp;
pub mod jakstat;
pub mod lhd;
pub mod toy;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koh::{KohData, KohModelState, McmcConfig, ModelPriors, ModelSpec, NoiseModel, Prior, SimRowMean};
use crate::linalg::KernelSpec;
use crate::rng::{self, tag};
pub use interp::{ground_truth_series, Interpolant, Interpolation};
pub use lhd::{maximin_lhd, random_lhd, Lhd, DEFAULT_RESTARTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Toy,
    Jakstat,
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "jakstat" | "jak-stat5" | "jak" => Ok(Self::Jakstat),
            _ => Err(Error::InvalidConfig(format!("unknown scenario '{s}'"))),
        }
    }
}

/// Declarative scenario definition. Unset fields take the scenario defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub domain: Option<(f64, f64)>,
    #[serde(default)]
    pub theta_priors: Option<Vec<Prior>>,
    #[serde(default)]
    pub n_field: Option<usize>,
    #[serde(default)]
    pub m_sim: Option<usize>,
    #[serde(default)]
    pub n_candidates: Option<usize>,
    #[serde(default)]
    pub n_pred: Option<usize>,
    /// Field CSV for JAK-STAT5 (columns time, D, x1, x2).
    #[serde(default)]
    pub data_file: Option<PathBuf>,
    /// Variance of the noise the responder adds to each observation.
    #[serde(default)]
    pub noise_var: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub interpolation: Interpolation,
    #[serde(default)]
    pub noise_per_task: bool,
    #[serde(default = "default_restarts")]
    pub lhd_restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            domain: None,
            theta_priors: None,
            n_field: None,
            m_sim: None,
            n_candidates: None,
            n_pred: None,
            data_file: None,
            noise_var: None,
            alpha: None,
            interpolation: Interpolation::Linear,
            noise_per_task: false,
            lhd_restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }

    pub fn toy() -> Self {
        Self::new(ScenarioKind::Toy)
    }

    pub fn jakstat() -> Self {
        Self::new(ScenarioKind::Jakstat)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// A scenario name (`toy`, `jakstat`) or a path to a `.json`/`.toml` file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Ok(kind) = name_or_path.parse() {
            return Ok(Self::new(kind));
        }
        Self::from_path(Path::new(name_or_path))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)?,
            _ => serde_json::from_str(&text)?,
        };
        if let (Some(f), Some(dir)) = (&cfg.data_file, path.parent()) {
            if f.is_relative() {
                cfg.data_file = Some(dir.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn build(&self) -> Result<Scenario> {
        match self.kind {
            ScenarioKind::Toy => build_toy(self),
            ScenarioKind::Jakstat => build_jakstat(self),
        }
    }
}

/// Plays the physical process for simulated adaptive campaigns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Responder {
    Toy { noise_var: f64 },
    /// Per-output interpolants of observed series.
    Series { series: Vec<Interpolant>, noise_var: f64 },
}

impl Responder {
    pub fn mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Responder::Toy { .. } => Ok(vec![toy::toy_true_mean(x[0])]),
            Responder::Series { series, .. } => Ok(series.iter().map(|s| s.eval(x[0])).collect()),
        }
    }

    pub fn noise_var(&self) -> f64 {
        match self {
            Responder::Toy { noise_var } | Responder::Series { noise_var, .. } => *noise_var,
        }
    }

    pub fn respond<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let sd = self.noise_var().sqrt();
        Ok(self.mean(x)?.into_iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect())
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub data: KohData,
    pub spec: ModelSpec,
    pub candidates: Vec<Vec<f64>>,
    pub prediction_grid: Vec<Vec<f64>>,
    pub design_box: Vec<(f64, f64)>,
    /// Location-major truth on the prediction grid.
    pub truth: Vec<f64>,
    pub alpha: f64,
    pub responder: Responder,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self.config.kind {
            ScenarioKind::Toy => "toy",
            ScenarioKind::Jakstat => "jakstat",
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.data.n_outputs()
    }

    /// Two-stage fit on the initial data.
    pub fn fit(&self, stage1: &McmcConfig, stage2: &McmcConfig) -> Result<KohModelState> {
        KohModelState::fit(
            self.data.clone(),
            self.spec.clone(),
            self.prediction_grid.clone(),
            self.design_box.clone(),
            stage1,
            stage2,
        )
    }

    /// Responder stream for round `round`.
    pub fn responder_rng(&self, seed: u64, round: usize) -> rng::Rng {
        rng::stream(seed, &[tag::RESPONDER, round as u64])
    }
}

fn column_variance(rows: &[Vec<f64>], t: usize) -> f64 {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r[t]).sum::<f64>() / n;
    (rows.iter().map(|r| (r[t] - mean).powi(2)).sum::<f64>() / n).max(1e-8)
}

fn log_normal(center: f64, sigma: f64) -> Prior {
    Prior::LogNormal { mu: center.ln(), sigma }
}

fn lengthscale_priors(widths: &[f64]) -> Vec<Prior> {
    widths.iter().map(|w| log_normal(0.25 * w, 1.0)).collect()
}

/// Prior centres of a kernel's coordinates used as its starting value.
fn template_from_priors(template: &KernelSpec, priors: &[Prior]) -> KernelSpec {
    let c: Vec<f64> = priors.iter().map(Prior::center).collect();
    crate::koh::params::kernel_from_coords(template, &c)
}

fn kronecker_priors(widths: &[f64], variances: &[f64]) -> Vec<Prior> {
    let mut p = lengthscale_priors(widths);
    for i in 0..variances.len() {
        for j in 0..=i {
            p.push(if i == j {
                Prior::Normal { mu: 0.5 * variances[i].ln(), sigma: 1.0 }
            } else {
                Prior::Normal { mu: 0.0, sigma: variances[i].sqrt() }
            });
        }
    }
    p
}

fn noise_priors(cfg: &ScenarioConfig, noise_var: f64, p: usize) -> (NoiseModel, Vec<Prior>) {
    let model = if cfg.noise_per_task { NoiseModel::PerTask } else { NoiseModel::Shared };
    let n = if cfg.noise_per_task { p } else { 1 };
    (model, vec![log_normal(noise_var, 1.0); n])
}

fn box_widths(boxes: &[(f64, f64)]) -> Vec<f64> {
    boxes.iter().map(|(lo, hi)| hi - lo).collect()
}

fn check_disjoint(a: &[f64], b: &[f64], scale: f64, what: &str) -> Result<()> {
    let tol = 1e-9 * scale;
    if a.iter().any(|x| b.iter().any(|y| (x - y).abs() <= tol)) {
        return Err(Error::InvalidConfig(format!("{what} overlap")));
    }
    Ok(())
}

fn linspace(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn rows(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|&x| vec![x]).collect()
}

fn build_toy(cfg: &ScenarioConfig) -> Result<Scenario> {
    let domain = cfg.domain.unwrap_or(toy::DOMAIN);
    if !(domain.1 > domain.0) || domain.0 + toy::SHIFT <= 0.0 {
        return Err(Error::InvalidConfig(format!("toy domain {domain:?}")));
    }
    let theta_priors = cfg.theta_priors.clone().unwrap_or_else(|| {
        vec![
            Prior::Uniform { lo: toy::T1_BOX.0, hi: toy::T1_BOX.1 },
            Prior::Uniform { lo: toy::T2_BOX.0, hi: toy::T2_BOX.1 },
        ]
    });
    if theta_priors.len() != 2 {
        return Err(Error::DimensionMismatch { context: "toy theta priors", expected: 2, found: theta_priors.len() });
    }
    let noise_var = cfg.noise_var.unwrap_or(toy::NOISE_VAR);
    let (n_field, m_sim) = (cfg.n_field.unwrap_or(5), cfg.m_sim.unwrap_or(30));
    let (n_cand, n_pred) = (cfg.n_candidates.unwrap_or(50), cfg.n_pred.unwrap_or(100));

    let x_field = maximin_lhd(n_field, &[domain], cfg.lhd_restarts, cfg.seed).points;
    let mut noise = rng::stream(cfg.seed, &[tag::FIELD_NOISE]);
    let y_field = x_field.iter().map(|x| vec![toy::toy_true(x[0], noise_var, &mut noise)]).collect();

    let priors_box = ModelPriors { theta: theta_priors.clone(), phi1: vec![], phi2: vec![], sigma2: vec![] }.theta_box();
    let sim_box = [domain, priors_box[0], priors_box[1]];
    let sim = maximin_lhd(m_sim, &sim_box, cfg.lhd_restarts, rng::derive(cfg.seed, &[1])).points;
    let y_sim = sim.iter().map(|s| toy::toy_sim(s[0], s[1], s[2]).map(|v| vec![v])).collect::<Result<Vec<_>>>()?;
    let data = KohData {
        x_field,
        y_field,
        x_sim: sim.iter().map(|s| vec![s[0]]).collect(),
        t_sim: sim.iter().map(|s| s[1..].to_vec()).collect(),
        y_sim,
    };

    let cand = toy::centered_grid(n_cand, domain);
    let pred = toy::centered_grid(n_pred, domain);
    let width = domain.1 - domain.0;
    check_disjoint(&cand, &pred, width, "toy candidate and prediction grids")?;

    let var_y = column_variance(&data.y_sim, 0);
    let mut phi1_priors = lengthscale_priors(&box_widths(&sim_box));
    phi1_priors.push(log_normal(var_y, 1.0));
    let phi2_priors = vec![
        log_normal(0.25 * width, 1.0),
        log_normal(0.1 * var_y, 1.5),
        log_normal(0.2 * width, 1.0),
        Prior::LogNormal { mu: 0.0, sigma: 1.0 },
    ];
    let phi1 = template_from_priors(&KernelSpec::rbf(vec![1.0; 3], 1.0), &phi1_priors);
    let phi2 = template_from_priors(&KernelSpec::rbf_times_periodic(vec![1.0], 1.0, 1.0, 1.0), &phi2_priors);
    let (noise_model, sigma2) = noise_priors(cfg, noise_var, 1);
    let spec = ModelSpec {
        phi1_template: phi1,
        phi2_template: phi2,
        priors: ModelPriors { theta: theta_priors, phi1: phi1_priors, phi2: phi2_priors, sigma2 },
        noise: noise_model,
        sim_mean: SimRowMean::Emulator,
        stage1_nugget: 1e-6,
    };
    Ok(Scenario {
        config: cfg.clone(),
        data,
        spec,
        truth: pred.iter().map(|&x| toy::toy_true_mean(x)).collect(),
        candidates: rows(&cand),
        prediction_grid: rows(&pred),
        design_box: vec![domain],
        alpha: cfg.alpha.unwrap_or(0.5),
        responder: Responder::Toy { noise_var },
    })
}

/// Snaps each target to the nearest unused entry of `pool`; returns indices.
fn snap_distinct(targets: &[f64], pool: &[f64]) -> Vec<usize> {
    let mut used = vec![false; pool.len()];
    targets
        .iter()
        .map(|&t| {
            let k = (0..pool.len())
                .filter(|&i| !used[i])
                .min_by(|&a, &b| (pool[a] - t).abs().total_cmp(&(pool[b] - t).abs()))
                .expect("more targets than pool entries");
            used[k] = true;
            k
        })
        .collect()
}

fn build_jakstat(cfg: &ScenarioConfig) -> Result<Scenario> {
    let window = cfg.domain.unwrap_or(jakstat::TIME_WINDOW);
    let theta_priors = cfg.theta_priors.clone().unwrap_or_else(jakstat::theta_priors);
    if theta_priors.len() != 6 {
        return Err(Error::DimensionMismatch { context: "JAK-STAT5 theta priors", expected: 6, found: theta_priors.len() });
    }
    let records = jakstat::load_field(cfg.data_file.as_deref(), cfg.seed)?;
    let input = jakstat::input_series(&records)?;
    let n_init = cfg.n_field.unwrap_or(4);
    if n_init == 0 || n_init > records.len() {
        return Err(Error::InvalidConfig(format!("{n_init} initial field points from {} records", records.len())));
    }
    let (m_sim, n_cand, n_pred) = (cfg.m_sim.unwrap_or(60), cfg.n_candidates.unwrap_or(60), cfg.n_pred.unwrap_or(100));
    let noise_var = cfg.noise_var.unwrap_or(jakstat::SYNTHETIC_NOISE_SD.powi(2));

    let times: Vec<f64> = records.iter().map(|r| r.time).collect();
    let values: Vec<Vec<f64>> = records.iter().map(|r| vec![r.x1, r.x2]).collect();
    let targets = maximin_lhd(n_init, &[window], cfg.lhd_restarts, cfg.seed).points;
    let mut picks = snap_distinct(&targets.iter().map(|p| p[0]).collect::<Vec<_>>(), &times);
    picks.sort_unstable();

    let theta_box = ModelPriors { theta: theta_priors.clone(), phi1: vec![], phi2: vec![], sigma2: vec![] }.theta_box();
    let sim_times = toy::centered_grid(m_sim, window);
    let sim_theta = maximin_lhd(m_sim, &theta_box, cfg.lhd_restarts, rng::derive(cfg.seed, &[1])).points;
    let y_sim = jakstat::simulate_runs(&sim_times, &sim_theta, &input)?;
    let data = KohData {
        x_field: picks.iter().map(|&i| vec![times[i]]).collect(),
        y_field: picks.iter().map(|&i| values[i].clone()).collect(),
        x_sim: rows(&sim_times),
        t_sim: sim_theta,
        y_sim,
    };

    let cand = linspace(n_cand, (window.0 + 1.0, window.1));
    check_disjoint(&cand, &sim_times, window.1 - window.0, "JAK-STAT5 candidate and simulator grids")?;
    let pred = toy::centered_grid(n_pred, window);
    let truth = ground_truth_series(&times, &values, &pred, cfg.interpolation)?.concat();
    let series = (0..2)
        .map(|t| Interpolant::new(&times, &values.iter().map(|r| r[t]).collect::<Vec<_>>(), cfg.interpolation))
        .collect::<Result<Vec<_>>>()?;

    let variances = [column_variance(&data.y_sim, 0), column_variance(&data.y_sim, 1)];
    let mut widths = vec![window.1 - window.0];
    widths.extend(box_widths(&theta_box));
    let phi1_priors = kronecker_priors(&widths, &variances);
    let phi2_priors = kronecker_priors(&[window.1 - window.0], &variances.map(|v| 0.1 * v));
    let b0 = DMatrix::identity(2, 2);
    let phi1 = template_from_priors(&KernelSpec::kronecker(vec![1.0; 7], b0.clone()), &phi1_priors);
    let phi2 = template_from_priors(&KernelSpec::kronecker(vec![1.0], b0), &phi2_priors);
    let (noise_model, sigma2) = noise_priors(cfg, noise_var, 2);
    let spec = ModelSpec {
        phi1_template: phi1,
        phi2_template: phi2,
        priors: ModelPriors { theta: theta_priors, phi1: phi1_priors, phi2: phi2_priors, sigma2 },
        noise: noise_model,
        sim_mean: SimRowMean::Emulator,
        stage1_nugget: 1e-6,
    };
    Ok(Scenario {
        config: cfg.clone(),
        data,
        spec,
        truth,
        candidates: rows(&cand),
        prediction_grid: rows(&pred),
        design_box: vec![window],
        alpha: cfg.alpha.unwrap_or(0.3),
        responder: Responder::Series { series, noise_var },
    })
}
