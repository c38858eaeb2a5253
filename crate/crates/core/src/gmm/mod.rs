//! Gaussian mixtures and their compression.

mod compress;
mod mixture;

pub use compress::{
    compress, compress_detailed, kmeans_reduce, merge_cost, whiten, Compressed, CompressionConfig,
    CompressionStats, Reduction, Whitening,
};
pub use mixture::{log_sum_exp, moment_match, Component, GaussianMixture};
