//! Metric projection onto the cone `{mu : mu_i >= 0 for i in I}`:
//! `min (x - mu)^T H (x - mu)` with `H` symmetric positive semidefinite.
//!
//! Primal active-set method in the Lawson-Hanson style. The working set
//! holds all unconstrained coordinates plus the constrained coordinates
//! currently allowed to be positive; its Hessian block is kept as a growing
//! Cholesky factor.

use nalgebra::{DMatrix, DVector};

use crate::linalg::GrowingCholesky;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub mu: Vec<f64>,
    pub objective: f64,
    /// Largest KKT violation relative to `max |H x|`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

const DEPENDENCE_TOL: f64 = 1e-12;

/// Project `x` onto the cone in the metric `J / M`, with `inactive` the
/// sign-constrained coordinates.
pub fn project_qp(x: &[f64], j: &DMatrix<f64>, m: usize, inactive: &[usize], qp_tol: f64) -> Result<QpSolution> {
    let n = x.len();
    if j.nrows() != n || j.ncols() != n {
        return Err(Error::DimensionMismatch { what: "Fisher matrix", expected: n, found: j.nrows() });
    }
    if m == 0 {
        return Err(Error::InvalidArgument("M must be positive".into()));
    }
    if !(qp_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("qp_tol must be positive, got {qp_tol}")));
    }
    let mut constrained = vec![false; n];
    for &i in inactive {
        if i >= n {
            return Err(Error::InvalidArgument(format!("index {i} out of range for dimension {n}")));
        }
        constrained[i] = true;
    }
    let h = j / m as f64;
    let hx = &h * DVector::from_column_slice(x);
    let scale = hx.amax().max(f64::MIN_POSITIVE);

    if (0..n).all(|i| !constrained[i] || x[i] >= 0.0) {
        return Ok(QpSolution { mu: x.to_vec(), objective: 0.0, kkt_residual: 0.0, iterations: 0 });
    }

    let mut mu = vec![0.0; n];
    let mut in_set = vec![false; n];
    let mut set: Vec<usize> = Vec::new();
    let mut chol = GrowingCholesky::new();
    for i in 0..n {
        if !constrained[i] {
            if chol.push(|k| h[(set[k], i)], h[(i, i)], DEPENDENCE_TOL) {
                set.push(i);
                in_set[i] = true;
            } else {
                // Dependent unconstrained direction: the objective does not
                // see it, keep the input value.
                mu[i] = x[i];
            }
        }
    }
    let pinned: Vec<usize> = (0..n).filter(|&i| !constrained[i] && !in_set[i]).collect();
    let rhs_of = |set: &[usize], mu: &[f64]| -> Vec<f64> {
        set.iter()
            .map(|&i| hx[i] - pinned.iter().map(|&k| h[(i, k)] * mu[k]).sum::<f64>())
            .collect()
    };
    if !set.is_empty() {
        let z = chol.solve(&rhs_of(&set, &mu));
        for (&i, &v) in set.iter().zip(&z) {
            mu[i] = v;
        }
    }

    let max_iter = 10 * n + 50;
    let mut iterations = 0;
    let mut rejected = vec![false; n];
    loop {
        iterations += 1;
        if iterations > max_iter {
            let (residual, _) = kkt(&h, &hx, x, &mu, &constrained, scale);
            return Err(Error::QpIterationLimit { iterations: max_iter, residual });
        }
        // Candidate with the steepest descent among zero-fixed coordinates.
        let support: Vec<usize> = (0..n).filter(|&k| mu[k] != 0.0).collect();
        let mut best = None;
        let mut best_w = qp_tol * scale;
        for t in 0..n {
            if constrained[t] && !in_set[t] && !rejected[t] {
                let w = hx[t] - support.iter().map(|&k| h[(t, k)] * mu[k]).sum::<f64>();
                if w > best_w {
                    best_w = w;
                    best = Some(t);
                }
            }
        }
        let Some(t) = best else { break };
        if !chol.push(|k| h[(set[k], t)], h[(t, t)], DEPENDENCE_TOL) {
            rejected[t] = true;
            continue;
        }
        set.push(t);
        in_set[t] = true;

        let mut first = true;
        loop {
            let z = chol.solve(&rhs_of(&set, &mu));
            let feasible = set.iter().zip(&z).all(|(&i, &v)| !constrained[i] || v > 0.0);
            if feasible {
                for (&i, &v) in set.iter().zip(&z) {
                    mu[i] = v;
                }
                break;
            }
            if first && z[set.len() - 1] <= 0.0 {
                // The entering coordinate cannot move; drop it.
                set.pop();
                in_set[t] = false;
                rejected[t] = true;
                chol.pop();
                break;
            }
            first = false;
            let mut alpha = 1.0_f64;
            for (&i, &v) in set.iter().zip(&z) {
                if constrained[i] && v <= 0.0 {
                    let a = mu[i] / (mu[i] - v);
                    alpha = alpha.min(a);
                }
            }
            for (&i, &v) in set.iter().zip(&z) {
                mu[i] += alpha * (v - mu[i]);
            }
            let before = set.len();
            let mu_max = set.iter().map(|&i| mu[i].abs()).fold(0.0, f64::max);
            let mut keep = Vec::with_capacity(before);
            for &i in &set {
                if constrained[i] && mu[i] <= 1e-14 * mu_max {
                    mu[i] = 0.0;
                    in_set[i] = false;
                } else {
                    keep.push(i);
                }
            }
            if keep.len() == before {
                // Rounding left the blocking coordinate marginally positive.
                let (pos, _) = set
                    .iter()
                    .enumerate()
                    .filter(|(_, &i)| constrained[i])
                    .min_by(|a, b| mu[*a.1].total_cmp(&mu[*b.1]))
                    .expect("a blocking coordinate exists");
                let i = set[pos];
                mu[i] = 0.0;
                in_set[i] = false;
                keep.remove(pos);
            }
            set = keep;
            chol = GrowingCholesky::new();
            let mut rebuilt = Vec::with_capacity(set.len());
            for &i in &set {
                if chol.push(|k| h[(rebuilt[k], i)], h[(i, i)], DEPENDENCE_TOL) {
                    rebuilt.push(i);
                } else {
                    in_set[i] = false;
                    if constrained[i] {
                        mu[i] = 0.0;
                    }
                }
            }
            set = rebuilt;
        }
        rejected.iter_mut().for_each(|r| *r = false);
        debug_assert_eq!(chol.len(), set.len());
    }

    let (kkt_residual, objective) = kkt(&h, &hx, x, &mu, &constrained, scale);
    Ok(QpSolution { mu, objective, kkt_residual, iterations })
}

/// Relative KKT residual and objective of a feasible point.
fn kkt(h: &DMatrix<f64>, hx: &DVector<f64>, x: &[f64], mu: &[f64], constrained: &[bool], scale: f64) -> (f64, f64) {
    let w = hx - h * DVector::from_column_slice(mu);
    let mut worst: f64 = 0.0;
    let mut objective = 0.0;
    for i in 0..mu.len() {
        let v = if !constrained[i] || mu[i] > 0.0 { w[i].abs() } else { w[i].max(0.0) };
        worst = worst.max(v);
        objective += (x[i] - mu[i]) * w[i];
    }
    (worst / scale, objective.max(0.0))
}

/// `(x - mu)^T (J / M) (x - mu)`.
pub fn qp_objective(x: &[f64], mu: &[f64], j: &DMatrix<f64>, m: usize) -> f64 {
    let d = DVector::from_iterator(x.len(), x.iter().zip(mu).map(|(a, b)| a - b));
    (d.transpose() * j * &d)[(0, 0)] / m as f64
}
