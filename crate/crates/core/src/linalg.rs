//! Dense linear-algebra helpers shared by the estimators and the
//! identifiability tests.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex64;

use crate::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Replace `m` by `(m + m^H) / 2`.
pub fn hermitian_part(m: &mut CMatrix) {
    let n = m.nrows();
    for j in 0..n {
        m[(j, j)] = Complex64::new(m[(j, j)].re, 0.0);
        for i in (j + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn symmetric_part(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky factor of a Hermitian positive-definite matrix.
pub fn hpd_cholesky(m: &CMatrix) -> Result<Cholesky<Complex64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Singular("covariance is not positive definite".into()))
}

/// `log|m|` from a Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<Complex64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum()
}

/// Inverse and log-determinant of a Hermitian positive-definite matrix.
pub fn hpd_inverse_logdet(m: &CMatrix) -> Result<(CMatrix, f64)> {
    let chol = hpd_cholesky(m)?;
    let logdet = chol_logdet(&chol);
    let mut inv = chol.inverse();
    hermitian_part(&mut inv);
    Ok((inv, logdet))
}

/// Real trace of a complex matrix.
pub fn real_trace(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// Eigendecomposition of a real symmetric matrix with eigenvalues sorted
/// in descending order.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `rank_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> usize {
    let sv = singular_values(m);
    match sv.first() {
        Some(&top) if top > 0.0 => sv.iter().filter(|&&s| s > rank_tol * top).count(),
        _ => 0,
    }
}

/// Orthonormal basis (as columns) of the numerical null space of `m`.
///
/// Singular values below `rank_tol * sigma_max` count as zero. A zero matrix
/// has the whole space as null space.
pub fn null_space(m: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a complete right basis.
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let top = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = rank_tol * top;
    let null_rows: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| top == 0.0 || svd.singular_values[i] <= cutoff)
        .collect();
    let mut basis = DMatrix::zeros(cols, null_rows.len());
    for (c, &r) in null_rows.iter().enumerate() {
        basis.set_column(c, &v_t.row(r).transpose());
    }
    basis
}

/// Solve `a x = b` for symmetric positive semidefinite `a`, using Cholesky
/// when possible and a truncated eigen pseudo-inverse otherwise.
pub fn psd_solve(a: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> DVector<f64> {
    if a.nrows() == 0 {
        return DVector::zeros(0);
    }
    if let Some(chol) = Cholesky::new(a.clone()) {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        // Squared diagonal ratio bounds the conditioning from below.
        if lo > 0.0 && (lo / hi).powi(2) > rank_tol {
            return chol.solve(b);
        }
    }
    let (values, vectors) = sorted_symmetric_eigen(a);
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    let mut x = DVector::zeros(a.nrows());
    for (k, &lambda) in values.iter().enumerate() {
        if lambda > rank_tol * top && lambda > 0.0 {
            let v = vectors.column(k);
            x += v * (v.dot(b) / lambda);
        }
    }
    x
}

/// Residual `|| a b - I ||_F` for square complex matrices.
pub fn identity_residual(a: &CMatrix, b: &CMatrix) -> f64 {
    let mut prod = a * b;
    for i in 0..prod.nrows() {
        prod[(i, i)] -= Complex64::new(1.0, 0.0);
    }
    prod.norm()
}

/// Lower-triangular Cholesky factor of a Gram block `G[P, P]`, grown and
/// shrunk one index at a time at the end.
pub(crate) struct GrowingCholesky {
    rows: Vec<Vec<f64>>,
}

impl GrowingCholesky {
    pub(crate) fn new() -> Self {
        Self { rows: Vec::new() }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows.len()
    }

    /// Append an index whose Gram entries against the current indices are
    /// `cross(k)` and whose diagonal entry is `diag`. Returns false, leaving
    /// the factor unchanged, if the new index is numerically dependent.
    pub(crate) fn push(&mut self, cross: impl Fn(usize) -> f64, diag: f64, rel_tol: f64) -> bool {
        let p = self.rows.len();
        let mut row = Vec::with_capacity(p + 1);
        for k in 0..p {
            let dot: f64 = self.rows[k][..k].iter().zip(&row).map(|(a, b)| a * b).sum();
            row.push((cross(k) - dot) / self.rows[k][k]);
        }
        let d2 = diag - row.iter().map(|v| v * v).sum::<f64>();
        if !(diag > 0.0) || d2 <= rel_tol * diag {
            return false;
        }
        row.push(d2.sqrt());
        self.rows.push(row);
        true
    }

    pub(crate) fn pop(&mut self) {
        self.rows.pop();
    }

    /// Solve `G[P, P] z = rhs`.
    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let p = self.rows.len();
        let mut y = vec![0.0; p];
        for i in 0..p {
            let s: f64 = self.rows[i][..i].iter().zip(&y).map(|(a, b)| a * b).sum();
            y[i] = (rhs[i] - s) / self.rows[i][i];
        }
        for i in (0..p).rev() {
            let mut s = y[i];
            for k in (i + 1)..p {
                s -= self.rows[k][i] * y[k];
            }
            y[i] = s / self.rows[i][i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_identity_and_zero() {
        assert_eq!(null_space(&DMatrix::identity(4, 4), 1e-9).ncols(), 0);
        let z = null_space(&DMatrix::zeros(3, 3), 1e-9);
        assert_eq!(z.ncols(), 3);
        let gram = z.transpose() * &z;
        assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let m = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
        let n = null_space(&m, 1e-9);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-12);
    }

    #[test]
    fn psd_solve_handles_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let x = psd_solve(&a, &b, 1e-12);
        assert!((&a * &x - &b).norm() < 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_logdet_matches_diagonal() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![Complex64::new(2.0, 0.0), Complex64::new(3.0, 0.0)]));
        let (inv, ld) = hpd_inverse_logdet(&m).unwrap();
        assert!((ld - 6.0_f64.ln()).abs() < 1e-14);
        assert!((inv[(1, 1)].re - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[cfg(test)]
mod growing_tests {
    use super::*;

    #[test]
    fn growing_cholesky_solves_and_detects_dependence() {
        let g = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 2.0, 2.0, 3.0, 1.0, 2.0, 1.0, 1.0]);
        let mut c = GrowingCholesky::new();
        assert!(c.push(|_| 0.0, g[(0, 0)], 1e-12));
        assert!(c.push(|k| g[(k, 1)], g[(1, 1)], 1e-12));
        // third column equals half the first
        assert!(!c.push(|k| g[(k, 2)], g[(2, 2)], 1e-12));
        assert_eq!(c.len(), 2);
        let z = c.solve(&[2.0, 1.0]);
        assert!((4.0 * z[0] + 2.0 * z[1] - 2.0).abs() < 1e-12);
        assert!((2.0 * z[0] + 3.0 * z[1] - 1.0).abs() < 1e-12);
    }
}
