//! Fisher information of the covariance model and the lifted sequence
//! matrices whose null spaces govern identifiability.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::{hpd_cholesky, CMatrix};
use crate::model::{true_covariance, SequenceMatrix};
use crate::{Error, Result};

/// `J = M (P .* conj(P))` with `P = S^H Sigma^{-1} S`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub j: DMatrix<f64>,
    pub scale: usize,
}

/// Complex Khatri-Rao lift `S_hat` and its real re-encoding `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedMatrices {
    pub s_hat: CMatrix,
    pub d: DMatrix<f64>,
}

impl LiftedMatrices {
    pub fn new(s: &SequenceMatrix) -> Self {
        Self { s_hat: khatri_rao(s), d: build_d(s) }
    }
}

/// Blocks of a symmetric matrix under the (inactive, active) partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSplit {
    /// Rows and columns indexed by the inactive set.
    pub a: DMatrix<f64>,
    /// Inactive rows, active columns.
    pub b: DMatrix<f64>,
    /// Rows and columns indexed by the active set.
    pub c: DMatrix<f64>,
    pub inactive: Vec<usize>,
    pub active: Vec<usize>,
}

impl BlockSplit {
    /// Reassemble the full matrix.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n = self.inactive.len() + self.active.len();
        let mut m = DMatrix::zeros(n, n);
        for (r, &i) in self.inactive.iter().enumerate() {
            for (c, &j) in self.inactive.iter().enumerate() {
                m[(i, j)] = self.a[(r, c)];
            }
            for (c, &j) in self.active.iter().enumerate() {
                m[(i, j)] = self.b[(r, c)];
                m[(j, i)] = self.b[(r, c)];
            }
        }
        for (r, &i) in self.active.iter().enumerate() {
            for (c, &j) in self.active.iter().enumerate() {
                m[(i, j)] = self.c[(r, c)];
            }
        }
        m
    }
}

pub fn fisher_matrix(s: &SequenceMatrix, gamma: &[f64], noise_var: f64, n_antennas: usize) -> Result<FisherMatrix> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidArgument(format!("noise_var must be positive, got {noise_var}")));
    }
    let sigma = true_covariance(s, gamma, noise_var)?;
    let chol = hpd_cholesky(&sigma.sigma)?;
    // P = (L^{-1} S)^H (L^{-1} S)
    let mut w = s.entries.clone();
    chol.l_dirty().solve_lower_triangular_mut(&mut w);
    let p = w.ad_mul(&w);
    let n = s.n_columns();
    let scale = n_antennas as f64;
    let mut j = DMatrix::from_fn(n, n, |r, c| scale * p[(r, c)].norm_sqr());
    crate::linalg::symmetric_part(&mut j);
    Ok(FisherMatrix { j, scale: n_antennas })
}

/// Column `n` is `conj(s_n) kron s_n`, so that `vec(S diag(g) S^H) = S_hat g`
/// with column-major `vec`.
pub fn khatri_rao(s: &SequenceMatrix) -> CMatrix {
    let (l, n) = s.entries.shape();
    let mut out = CMatrix::zeros(l * l, n);
    for k in 0..n {
        let col = s.entries.column(k);
        for a in 0..l {
            let ca = col[a].conj();
            for b in 0..l {
                out[(a * l + b, k)] = ca * col[b];
            }
        }
    }
    out
}

/// Row pair `(i, j)` of the real re-encoding. Rows are the symmetric family
/// `i <= j` in lexicographic order followed by the antisymmetric family
/// `i < j`, also lexicographic.
pub fn d_row_pairs(l: usize) -> Vec<(usize, usize, bool)> {
    let mut rows = Vec::with_capacity(l * l);
    for i in 0..l {
        for j in i..l {
            rows.push((i, j, true));
        }
    }
    for i in 0..l {
        for j in (i + 1)..l {
            rows.push((i, j, false));
        }
    }
    rows
}

/// Real `L^2 x N` matrix with the same null space as the Khatri-Rao lift.
///
/// For real `x`, diagonal rows of `D x` equal entries of `S diag(x) S^H` and
/// off-diagonal rows carry the real and imaginary parts of the upper
/// triangle, so `||S_hat x||^2 = sum(diag rows^2) + 2 sum(off-diag rows^2)`.
pub fn build_d(s: &SequenceMatrix) -> DMatrix<f64> {
    let (l, n) = s.entries.shape();
    let e = &s.entries;
    let pairs = d_row_pairs(l);
    let mut d = DMatrix::zeros(pairs.len(), n);
    for k in 0..n {
        for (r, &(i, j, symmetric)) in pairs.iter().enumerate() {
            let (si, sj) = (e[(i, k)], e[(j, k)]);
            d[(r, k)] = if symmetric { si.re * sj.re + si.im * sj.im } else { si.re * sj.im - si.im * sj.re };
        }
    }
    d
}

/// Orthonormal basis of the numerical null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    Ok(crate::linalg::null_space(m, rank_tol))
}

/// Split a square matrix into its (inactive, active) blocks.
pub fn block_split(j: &DMatrix<f64>, inactive: &[usize]) -> Result<BlockSplit> {
    let n = j.nrows();
    let mut is_inactive = vec![false; n];
    for &i in inactive {
        if i >= n {
            return Err(Error::InvalidArgument(format!("index {i} out of range for dimension {n}")));
        }
        if is_inactive[i] {
            return Err(Error::InvalidArgument(format!("index {i} repeated in inactive set")));
        }
        is_inactive[i] = true;
    }
    let inactive: Vec<usize> = (0..n).filter(|&i| is_inactive[i]).collect();
    let active: Vec<usize> = (0..n).filter(|&i| !is_inactive[i]).collect();
    let a = j.select_rows(&inactive).select_columns(&inactive);
    let b = j.select_rows(&inactive).select_columns(&active);
    let c = j.select_rows(&active).select_columns(&active);
    Ok(BlockSplit { a, b, c, inactive, active })
}

/// `vec` of a square matrix in column-major order.
pub fn vec_columns(m: &CMatrix) -> Vec<Complex64> {
    m.iter().copied().collect()
}
