//! Covariance kernels and dense Cholesky-based primitives.

mod dense;
mod kernel;

pub use dense::{
    cholesky, logdet_spd, mvn_logpdf, mvn_logpdf_chol, symmetrize, triangular_solve,
    triangular_solve_transpose, try_cholesky, CholFactor, SpdMatrix, LN_2PI,
};
pub use kernel::{kernel_matrix, kernel_matrix_multi, KernelFamily, KernelSpec};
