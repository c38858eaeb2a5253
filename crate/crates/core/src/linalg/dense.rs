use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower-triangular Cholesky factor together with the diagonal jitter that was
/// needed to obtain it.
#[derive(Clone, Debug)]
pub struct CholFactor {
    pub l: DMatrix<f64>,
    pub jitter_used: f64,
}

/// Symmetric positive (semi-)definite matrix with a write-once factor.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    pub entries: DMatrix<f64>,
    chol: Option<CholFactor>,
}

impl SpdMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch {
                context: "SpdMatrix::new",
                expected: entries.nrows(),
                found: entries.ncols(),
            });
        }
        Ok(Self { entries, chol: None })
    }

    /// Builds the matrix and factors it immediately.
    pub fn factored(entries: DMatrix<f64>) -> Result<Self> {
        let mut m = Self::new(entries)?;
        m.chol = Some(cholesky(&m.entries, 0.0)?);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn chol(&self) -> Option<&CholFactor> {
        self.chol.as_ref()
    }

    pub fn factor(&self) -> Result<std::borrow::Cow<'_, CholFactor>> {
        match &self.chol {
            Some(c) => Ok(std::borrow::Cow::Borrowed(c)),
            None => Ok(std::borrow::Cow::Owned(cholesky(&self.entries, 0.0)?)),
        }
    }
}

fn mean_diag(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().max(1);
    m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64
}

/// Plain Cholesky without jitter escalation; `None` when a pivot is not positive.
pub fn try_cholesky(m: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let a = m.as_slice();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let (done, rest) = l.split_at_mut(j * n);
        let col = &mut rest[..n];
        col[j..].copy_from_slice(&a[j * n + j..(j + 1) * n]);
        col[j] += jitter;
        for k in 0..j {
            let lk = &done[k * n..(k + 1) * n];
            let ljk = lk[j];
            if ljk != 0.0 {
                for i in j..n {
                    col[i] -= lk[i] * ljk;
                }
            }
        }
        let d = col[j];
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let djj = d.sqrt();
        col[j] = djj;
        let inv = 1.0 / djj;
        for v in &mut col[j + 1..] {
            *v *= inv;
        }
    }
    Some(DMatrix::from_vec(n, n, l))
}

/// Cholesky factorization with geometric jitter escalation.
///
/// The first attempt uses `base_jitter`. On failure the jitter restarts at
/// `1e-10 * mean(diag)` (or `10 * base_jitter` if that is larger) and grows by a
/// factor of ten until it exceeds `1e-4 * mean(diag)`.
pub fn cholesky(m: &DMatrix<f64>, base_jitter: f64) -> Result<CholFactor> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "cholesky",
            expected: n,
            found: m.ncols(),
        });
    }
    if let Some(l) = try_cholesky(m, base_jitter) {
        return Ok(CholFactor { l, jitter_used: base_jitter });
    }
    let md = mean_diag(m);
    let cap = 1e-4 * md;
    let mut jitter = (1e-10 * md).max(10.0 * base_jitter);
    while jitter <= cap * (1.0 + 1e-12) {
        if let Some(l) = try_cholesky(m, jitter) {
            return Ok(CholFactor { l, jitter_used: jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { dim: n, jitter_cap: cap })
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L x = b` in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        forward_sub(&self.l, b);
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_in_place(&self, b: &mut [f64]) {
        backward_sub_transpose(&self.l, b);
    }

    /// Solves `(L Lᵀ) x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        forward_sub(&self.l, x.as_mut_slice());
        backward_sub_transpose(&self.l, x.as_mut_slice());
        x
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            let s = col.as_mut_slice();
            forward_sub(&self.l, s);
            backward_sub_transpose(&self.l, s);
        }
        x
    }

    /// `L⁻¹ B`, column by column.
    pub fn whiten_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            forward_sub(&self.l, col.as_mut_slice());
        }
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = self.solve_mat(&DMatrix::identity(n, n));
        symmetrize(&mut inv);
        inv
    }
}

fn forward_sub(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for k in 0..n {
        let col = &data[k * n..(k + 1) * n];
        let bk = b[k] / col[k];
        b[k] = bk;
        if bk != 0.0 {
            for i in (k + 1)..n {
                b[i] -= col[i] * bk;
            }
        }
    }
}

fn backward_sub_transpose(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = l.nrows();
    let data = l.as_slice();
    for k in (0..n).rev() {
        let col = &data[k * n..(k + 1) * n];
        let mut acc = b[k];
        for i in (k + 1)..n {
            acc -= col[i] * b[i];
        }
        b[k] = acc / col[k];
    }
}

fn check_triangular(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if !l.is_square() || l.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "triangular_solve",
            expected: l.nrows(),
            found: b.nrows(),
        });
    }
    if let Some(index) = l.diagonal().iter().position(|d| *d == 0.0 || !d.is_finite()) {
        return Err(Error::Singular { index });
    }
    Ok(())
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn triangular_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_triangular(l, b)?;
    let mut x = b.clone();
    for mut col in x.column_iter_mut() {
        forward_sub(l, col.as_mut_slice());
    }
    Ok(x)
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn triangular_solve_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_triangular(l, b)?;
    let mut x = b.clone();
    for mut col in x.column_iter_mut() {
        backward_sub_transpose(l, col.as_mut_slice());
    }
    Ok(x)
}

/// Gaussian log-density using an existing factor of the covariance.
pub fn mvn_logpdf_chol(x: &[f64], mean: &[f64], chol: &CholFactor) -> Result<f64> {
    let d = chol.dim();
    if x.len() != d || mean.len() != d {
        return Err(Error::DimensionMismatch {
            context: "mvn_logpdf",
            expected: d,
            found: if x.len() != d { x.len() } else { mean.len() },
        });
    }
    let mut r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    forward_sub(&chol.l, &mut r);
    let quad: f64 = r.iter().map(|v| v * v).sum();
    Ok(-0.5 * (quad + chol.logdet() + d as f64 * LN_2PI))
}

pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &SpdMatrix) -> Result<f64> {
    let chol = cov.factor()?;
    mvn_logpdf_chol(x, mean, &chol)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Log-determinant of a symmetric matrix via jittered Cholesky.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    Ok(cholesky(m, 0.0)?.logdet())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_factor_needs_no_jitter() {
        let c = cholesky(&DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(c.l, DMatrix::identity(2, 2));
        assert_eq!(c.jitter_used, 0.0);
    }

    #[test]
    fn diagonal_and_dense_factors() {
        let c = cholesky(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0])), 0.0).unwrap();
        assert_relative_eq!(c.l, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])));

        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let c = cholesky(&m, 0.0).unwrap();
        assert_relative_eq!(c.l, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]), epsilon = 1e-14);
        assert_relative_eq!(&c.l * c.l.transpose(), m, epsilon = 1e-14);
    }

    #[test]
    fn singular_psd_gets_jitter() {
        let m = DMatrix::from_element(3, 3, 1.0);
        let c = cholesky(&m, 0.0).unwrap();
        assert!(c.jitter_used > 0.0 && c.jitter_used <= 1e-4);
        let rebuilt = &c.l * c.l.transpose();
        let target = &m + DMatrix::identity(3, 3) * c.jitter_used;
        assert_relative_eq!(rebuilt, target, epsilon = 1e-10);
    }

    #[test]
    fn indefinite_fails_at_cap() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky(&m, 0.0), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn triangular_solves() {
        let b = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(triangular_solve(&DMatrix::identity(2, 2), &b).unwrap(), b);
        let x = triangular_solve(&DMatrix::from_element(1, 1, 2.0), &DMatrix::from_element(1, 1, 6.0)).unwrap();
        assert_eq!(x[(0, 0)], 3.0);

        let l = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        let x = triangular_solve(&l, &DMatrix::from_column_slice(2, 1, &[4.0, 5.0])).unwrap();
        assert_relative_eq!(x[(0, 0)], 2.0);
        assert_relative_eq!(x[(1, 0)], 1.5);

        let y = triangular_solve_transpose(&l, &DMatrix::from_column_slice(2, 1, &[4.0, 5.0])).unwrap();
        assert_relative_eq!(l.transpose() * &y, DMatrix::from_column_slice(2, 1, &[4.0, 5.0]), epsilon = 1e-14);
    }

    #[test]
    fn zero_diagonal_is_singular() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(matches!(triangular_solve(&l, &b), Err(Error::Singular { index: 1 })));
    }

    #[test]
    fn logpdf_examples() {
        let one = SpdMatrix::new(DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(mvn_logpdf(&[0.0], &[0.0], &one).unwrap(), -0.918_938_533_204_672_7, epsilon = 1e-12);
        let i2 = SpdMatrix::new(DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(mvn_logpdf(&[1.0, 0.0], &[0.0, 0.0], &i2).unwrap(), -LN_2PI - 0.5, epsilon = 1e-12);
        assert_relative_eq!(-LN_2PI - 0.5, -2.33788, epsilon = 1e-5);
        let i5 = SpdMatrix::new(DMatrix::identity(5, 5)).unwrap();
        let m = [0.3; 5];
        assert_relative_eq!(mvn_logpdf(&m, &m, &i5).unwrap(), -2.5 * LN_2PI, epsilon = 1e-12);
    }

    #[test]
    fn logpdf_integrates_to_one() {
        let cov = SpdMatrix::new(DMatrix::from_element(1, 1, 0.7)).unwrap();
        let h = 1e-3;
        let total: f64 = (-20_000..=20_000)
            .map(|i| mvn_logpdf(&[0.4 + i as f64 * h], &[0.4], &cov).unwrap().exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-4);
    }

    #[test]
    fn inverse_matches_dense() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = cholesky(&m, 0.0).unwrap().inverse();
        assert_relative_eq!(&inv * &m, DMatrix::identity(3, 3), epsilon = 1e-12);
    }
}
