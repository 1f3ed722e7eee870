//! Does the origin lie in the convex hull of the columns of `E`?
//!
//! Solved as the least-distance program
//! `min_{u >= 0} || [E; r 1^T] u - r e_last ||` with the Lawson-Hanson
//! active-set method. A zero residual yields hull weights; a nonzero residual
//! `res` yields the separating direction `y = -res_E` with
//! `E^T y >= ||res||^2 > 0`.

use nalgebra::{DMatrix, DVector};

use crate::linalg::GrowingCholesky;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum HullOutcome {
    /// `z >= 0`, `sum(z) = 1` and `||E z|| = residual`.
    Contains { weights: Vec<f64>, residual: f64 },
    /// `E^T y >= margin * r * ||y||` componentwise, where `r` is the largest
    /// column norm of `E`.
    Separated { direction: Vec<f64>, margin: f64 },
}

const DEPENDENCE_TOL: f64 = 1e-13;

/// Decide origin membership. `tol` is the residual, relative to the largest
/// column norm, below which the origin counts as inside.
pub fn origin_in_hull(e: &DMatrix<f64>, tol: f64) -> Result<HullOutcome> {
    let (d, n) = e.shape();
    if n == 0 {
        return Ok(HullOutcome::Separated { direction: vec![0.0; d], margin: f64::INFINITY });
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("hull points must be finite".into()));
    }
    let norms2: Vec<f64> = e.column_iter().map(|c| c.norm_squared()).collect();
    let rho = norms2.iter().copied().fold(0.0, f64::max).sqrt();
    if rho == 0.0 {
        let mut weights = vec![0.0; n];
        weights[0] = 1.0;
        return Ok(HullOutcome::Contains { weights, residual: 0.0 });
    }
    let rho2 = rho * rho;
    let gram = |i: usize, j: usize| e.column(i).dot(&e.column(j)) + rho2;

    let mut u = vec![0.0; n];
    let mut in_set = vec![false; n];
    let mut rejected = vec![false; n];
    let mut set: Vec<usize> = Vec::new();
    let mut chol = GrowingCholesky::new();
    // Residual split as (E part, last coordinate).
    let mut res_e: DVector<f64> = DVector::zeros(d);
    let mut res_last = rho;
    let max_iter = 3 * n + 100;
    let mut iterations = 0;

    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::LpInconclusive(format!("hull test exceeded {max_iter} iterations")));
        }
        let res_norm = (res_e.norm_squared() + res_last * res_last).sqrt();
        let w = e.tr_mul(&res_e).add_scalar(rho * res_last);
        let threshold = 1e-13 * rho * res_norm.max(f64::MIN_POSITIVE);
        let mut best = None;
        let mut best_w = threshold;
        for t in 0..n {
            if !in_set[t] && !rejected[t] && w[t] > best_w {
                best_w = w[t];
                best = Some(t);
            }
        }
        let Some(t) = best else { break };
        if !chol.push(|k| gram(set[k], t), norms2[t] + rho2, DEPENDENCE_TOL) {
            rejected[t] = true;
            continue;
        }
        set.push(t);
        in_set[t] = true;

        let mut first = true;
        loop {
            let z = chol.solve(&vec![rho2; set.len()]);
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in set.iter().zip(&z) {
                    u[i] = v;
                }
                break;
            }
            if first && z[set.len() - 1] <= 0.0 {
                set.pop();
                chol.pop();
                in_set[t] = false;
                rejected[t] = true;
                break;
            }
            first = false;
            let mut alpha = 1.0_f64;
            let mut blocking = 0;
            for (pos, (&i, &v)) in set.iter().zip(&z).enumerate() {
                if v <= 0.0 {
                    let a = u[i] / (u[i] - v);
                    if a < alpha {
                        alpha = a;
                        blocking = pos;
                    }
                }
            }
            for (&i, &v) in set.iter().zip(&z) {
                u[i] += alpha * (v - u[i]);
            }
            let u_max = set.iter().map(|&i| u[i]).fold(0.0, f64::max);
            u[set[blocking]] = 0.0;
            let mut kept = Vec::with_capacity(set.len());
            for &i in &set {
                if u[i] <= 1e-14 * u_max {
                    u[i] = 0.0;
                    in_set[i] = false;
                } else {
                    kept.push(i);
                }
            }
            chol = GrowingCholesky::new();
            set.clear();
            for i in kept {
                if chol.push(|k| gram(set[k], i), norms2[i] + rho2, DEPENDENCE_TOL) {
                    set.push(i);
                } else {
                    u[i] = 0.0;
                    in_set[i] = false;
                }
            }
        }
        rejected.iter_mut().for_each(|r| *r = false);
        res_e.fill(0.0);
        let mut total = 0.0;
        for &i in &set {
            res_e.axpy(-u[i], &e.column(i), 1.0);
            total += u[i];
        }
        res_last = rho * (1.0 - total);
    }

    let res_norm = (res_e.norm_squared() + res_last * res_last).sqrt();
    let total: f64 = u.iter().sum();
    if res_norm <= tol * rho && total > 0.0 {
        let weights: Vec<f64> = u.iter().map(|&v| v / total).collect();
        let residual = (e * DVector::from_column_slice(&weights)).norm();
        return Ok(HullOutcome::Contains { weights, residual });
    }
    let y = -res_e;
    let y_norm = y.norm();
    let margin = if y_norm > 0.0 { e.tr_mul(&y).min() / (y_norm * rho) } else { f64::INFINITY };
    Ok(HullOutcome::Separated { direction: y.iter().copied().collect(), margin })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_around_origin_contains_it() {
        let e = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 2.0, -2.0]);
        match origin_in_hull(&e, 1e-9).unwrap() {
            HullOutcome::Contains { weights, residual } => {
                assert!(residual < 1e-12);
                assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(weights.iter().all(|&w| w >= 0.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shifted_points_are_separated() {
        let e = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 1.5, -1.0, 1.0, 0.0]);
        match origin_in_hull(&e, 1e-9).unwrap() {
            HullOutcome::Separated { direction, margin } => {
                assert!(margin > 0.1);
                let y = DVector::from_vec(direction);
                assert!(e.tr_mul(&y).min() > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_rows_contain_origin_and_empty_columns_do_not() {
        assert!(matches!(origin_in_hull(&DMatrix::zeros(0, 3), 1e-9).unwrap(), HullOutcome::Contains { .. }));
        assert!(matches!(origin_in_hull(&DMatrix::zeros(2, 0), 1e-9).unwrap(), HullOutcome::Separated { .. }));
    }

    #[test]
    fn origin_as_a_vertex() {
        let e = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 0.0, 1.0, -1.0]);
        assert!(matches!(origin_in_hull(&e, 1e-9).unwrap(), HullOutcome::Contains { .. }));
    }
}
