//! Two-stage Kennedy–O'Hagan calibration model.
//!
//! Stage 1 fits a GP emulator to the simulator runs and freezes its
//! hyperparameters φ₁. Stage 2 samples (θ, φ₂, σ²) given field and simulator
//! data jointly, with the emulator mean as the mean of field-like rows.

mod data;
pub mod mcmc;
mod model;
pub mod params;

pub use data::{KohData, Prior};
pub use mcmc::McmcConfig;
pub use model::{
    cov_cross, cov_sym, fit_stage1, freeze_phi1, solve_residual, stage1_log_likelihood, BlockCovariance, Emulator,
    ExtraPoint, KohModelState, ModelPriors, ModelSpec, NoiseModel, PosteriorSample, PredictiveGaussian, SimRowMean,
    Site,
};
