use covdetect::fisher::*;
use covdetect::linalg::{numerical_rank, CMatrix};
use covdetect::model::*;
use covdetect::rng;
use covdetect::Complex64;
use nalgebra::{DMatrix, DVector};

fn gaussian(l: usize, n: usize, seed: u64) -> SequenceMatrix {
    gen_sequences(SequenceKind::Gaussian, l, n, seed).unwrap()
}

fn random_gamma(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[77]);
    (0..n).map(|_| rng::standard_normal(&mut r).abs()).collect()
}

/// Real stacking `[Re A; Im A]`: real null vectors of `A` are its null vectors.
fn realify(a: &CMatrix) -> DMatrix<f64> {
    let (r, c) = a.shape();
    DMatrix::from_fn(2 * r, c, |i, j| if i < r { a[(i, j)].re } else { a[(i - r, j)].im })
}

/// `|| (I - B B^T) A ||` for orthonormal bases.
fn exchange_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b * (b.transpose() * a)).norm()
}

#[test]
fn fisher_matches_monte_carlo_score_outer_product() {
    let (n, l) = (4, 3);
    let s = gaussian(l, n, 1);
    let truth = GroundTruth::from_support(n, &[0, 2], 1.0).unwrap();
    let noise_var = 0.5;
    let draws = 200_000;
    let y = simulate(&s, &truth, draws, noise_var, 2).unwrap().y;
    let sigma = true_covariance(&s, &truth.gamma0, noise_var).unwrap().sigma;
    let inv = sigma.try_inverse().unwrap();
    let p = s.entries.adjoint() * &inv * &s.entries;
    let w = s.entries.adjoint() * &inv * &y;
    let mut mean = DMatrix::<f64>::zeros(n, n);
    let mut sq = DMatrix::<f64>::zeros(n, n);
    let mut score = vec![0.0; n];
    for m in 0..draws {
        for i in 0..n {
            score[i] = w[(i, m)].norm_sqr() - p[(i, i)].re;
        }
        for i in 0..n {
            for j in 0..n {
                let v = score[i] * score[j];
                mean[(i, j)] += v;
                sq[(i, j)] += v * v;
            }
        }
    }
    let j = fisher_matrix(&s, &truth.gamma0, noise_var, 1).unwrap().j;
    for a in 0..n {
        for b in 0..n {
            let mu = mean[(a, b)] / draws as f64;
            let se = ((sq[(a, b)] / draws as f64 - mu * mu) / draws as f64).sqrt();
            assert!((mu - j[(a, b)]).abs() <= 3.0 * se, "({a},{b}): {mu} vs {} (se {se})", j[(a, b)]);
        }
    }
}

#[test]
fn fisher_is_symmetric_nonnegative_psd_with_bounded_rank() {
    for seed in 0..20 {
        let (l, n) = (2 + seed as usize % 5, 5 + seed as usize % 30);
        let s = gaussian(l, n, seed);
        let f = fisher_matrix(&s, &random_gamma(n, seed), 0.3, 3).unwrap();
        assert_eq!(f.j, f.j.transpose());
        assert!(f.j.iter().all(|&v| v >= 0.0));
        let min_eig = f.j.clone().symmetric_eigenvalues().min();
        assert!(min_eig >= -1e-8 * f.j.norm());
        assert!(numerical_rank(&f.j, 1e-9) <= n.min(l * l));
    }
}

#[test]
fn vec_identity() {
    for seed in 0..20 {
        let s = gaussian(5, 9, seed);
        let gamma = random_gamma(9, seed);
        let mut m = CMatrix::zeros(5, 5);
        for (i, &g) in gamma.iter().enumerate() {
            let c = s.entries.column(i);
            m += &c * c.adjoint() * Complex64::new(g, 0.0);
        }
        let lhs = vec_columns(&m);
        let rhs = khatri_rao(&s) * DVector::from_iterator(9, gamma.iter().map(|&g| Complex64::new(g, 0.0)));
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).norm() <= 1e-12 * m.norm());
        }
    }
}

#[test]
fn d_and_khatri_rao_share_real_null_vectors() {
    for seed in 0..20 {
        let s = gaussian(3, 14, seed);
        let lifted = LiftedMatrices::new(&s);
        let nd = null_space(&lifted.d, 1e-9).unwrap();
        let ns = null_space(&realify(&lifted.s_hat), 1e-9).unwrap();
        assert_eq!(nd.ncols(), ns.ncols());
        assert!((&lifted.s_hat * nd.map(|v| Complex64::new(v, 0.0))).norm() < 1e-10);
        assert!((&lifted.d * &ns).norm() < 1e-10);
    }
}

#[test]
fn khatri_rao_norm_weights_off_diagonal_rows_twice() {
    let s = gaussian(4, 7, 3);
    let lifted = LiftedMatrices::new(&s);
    let pairs = d_row_pairs(4);
    for seed in 0..10 {
        let x = DVector::from_vec(random_gamma(7, seed).iter().map(|v| v - 0.5).collect());
        let sx = (&lifted.s_hat * x.map(|v| Complex64::new(v, 0.0))).norm_squared();
        let dx = &lifted.d * &x;
        let weighted: f64 = pairs.iter().zip(dx.iter()).map(|(&(i, j, _), v)| if i == j { v * v } else { 2.0 * v * v }).sum();
        assert!((sx - weighted).abs() <= 1e-12 * sx);
    }
}

#[test]
fn generic_d_has_full_row_rank() {
    for seed in 0..100 {
        let d = build_d(&gaussian(3, 12, seed));
        assert_eq!(null_space(&d, 1e-9).unwrap().ncols(), 3, "seed {seed}");
    }
}

#[test]
fn fisher_and_d_null_spaces_coincide() {
    for seed in 0..20 {
        let (l, n) = (3 + seed as usize % 3, 20 + seed as usize % 15);
        let s = gaussian(l, n, seed);
        let j = fisher_matrix(&s, &random_gamma(n, seed), 0.7, 1).unwrap().j;
        let d = build_d(&s);
        let nj = null_space(&j, 1e-9).unwrap();
        let nd = null_space(&d, 1e-9).unwrap();
        assert_eq!(nj.ncols(), nd.ncols());
        assert!((&d * &nj).norm() <= 1e-8 * d.norm() * nj.norm().max(1.0));
        assert!(exchange_residual(&nj, &nd) < 1e-8);
        assert!(exchange_residual(&nd, &nj) < 1e-8);
    }
}

#[test]
fn null_space_ignores_coefficients_and_noise_level() {
    for seed in 0..10 {
        let s = gaussian(3, 16, seed);
        let a = null_space(&fisher_matrix(&s, &random_gamma(16, seed), 0.2, 1).unwrap().j, 1e-9).unwrap();
        let b = null_space(&fisher_matrix(&s, &random_gamma(16, seed + 100), 20.0, 5).unwrap().j, 1e-9).unwrap();
        assert_eq!(a.ncols(), b.ncols());
        assert!(exchange_residual(&a, &b) < 1e-8);
    }
}

#[test]
fn zero_quadratic_form_matches_eigenbasis_constraints() {
    for seed in 0..10 {
        let (l, n) = (3, 15);
        let s = gaussian(l, n, seed);
        let gamma = random_gamma(n, seed);
        let sigma = true_covariance(&s, &gamma, 0.4).unwrap().sigma;
        let u = sigma.symmetric_eigen().eigenvectors;
        let v = s.entries.adjoint() * u;
        let mut constraints = CMatrix::zeros(l * l, n);
        for i in 0..l {
            for k in 0..l {
                for c in 0..n {
                    constraints[(i * l + k, c)] = v[(c, i)] * v[(c, k)].conj();
                }
            }
        }
        let nc = null_space(&realify(&constraints), 1e-9).unwrap();
        let nj = null_space(&fisher_matrix(&s, &gamma, 0.4, 1).unwrap().j, 1e-9).unwrap();
        assert_eq!(nc.ncols(), nj.ncols());
        assert!(exchange_residual(&nc, &nj) < 1e-8);
    }
}
