//! Dense two-phase tableau simplex for standard-form linear programs
//! `min c^T x  s.t.  A x = b, x >= 0`.
//!
//! Rows are equilibrated and sign-normalized before phase 1; every row gets
//! an artificial column, which is kept through phase 2 so that dual values
//! can be read from its reduced cost. Pricing is Dantzig's rule, switching
//! to Bland's rule after a run of degenerate pivots.

use nalgebra::DMatrix;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    /// Phase-1 objective above which the program is declared infeasible.
    pub feas_tol: f64,
    /// Reduced-cost tolerance for optimality.
    pub opt_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Pivot cap; `None` means `10 * (rows + cols)`.
    pub max_iter: Option<usize>,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-9, opt_tol: 1e-11, pivot_tol: 1e-11, max_iter: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal {
        x: Vec<f64>,
        objective: f64,
        /// Dual values `y` with `c - A^T y >= 0` at optimality.
        duals: Vec<f64>,
    },
    Infeasible {
        /// Minimal total constraint violation `sum |A x - b|` found by phase 1.
        violation: f64,
        /// Farkas vector `p` with `A^T p <= 0` and `b^T p = violation > 0`.
        farkas: Vec<f64>,
    },
    Unbounded,
}

/// Result of a feasibility-only solve.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible { x: Vec<f64>, violation: f64 },
    Infeasible { violation: f64, farkas: Vec<f64> },
}

struct Tableau {
    rows: usize,
    /// Original columns; artificial column of row `i` is `n + i`.
    n: usize,
    width: usize,
    data: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Per-row factor mapping scaled rows back: `A_scaled = diag(row_factor) A`.
    row_factor: Vec<f64>,
    iterations: usize,
    max_iter: usize,
}

impl Tableau {
    fn new(a: &DMatrix<f64>, b: &[f64], opts: &LpOptions) -> Self {
        let (m, n) = a.shape();
        let width = n + m + 1;
        let mut data = vec![0.0; m * width];
        let mut row_factor = vec![1.0; m];
        for i in 0..m {
            let scale = (0..n).map(|j| a[(i, j)].abs()).fold(b[i].abs(), f64::max);
            let mut f = if scale > 0.0 { 1.0 / scale } else { 1.0 };
            if b[i] < 0.0 {
                f = -f;
            }
            row_factor[i] = f;
            let row = &mut data[i * width..(i + 1) * width];
            for j in 0..n {
                row[j] = f * a[(i, j)];
            }
            row[n + i] = 1.0;
            row[width - 1] = f * b[i];
        }
        let max_iter = opts.max_iter.unwrap_or(10 * (m + n)).max(1);
        Self {
            rows: m,
            n,
            width,
            data,
            obj: vec![0.0; width],
            basis: (n..n + m).collect(),
            row_factor,
            iterations: 0,
            max_iter,
        }
    }

    fn rhs(&self, i: usize) -> f64 {
        self.data[i * self.width + self.width - 1]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    /// Set the reduced-cost row for cost vector `c` over all columns.
    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..cost.len()].copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.data[i * w..(i + 1) * w];
                for (o, &t) in self.obj.iter_mut().zip(row) {
                    *o -= cb * t;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        {
            let row = &mut self.data[r * w..(r + 1) * w];
            let inv = 1.0 / p;
            row.iter_mut().for_each(|v| *v *= inv);
            row[c] = 1.0;
        }
        let (before, rest) = self.data.split_at_mut(r * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (v, &pr) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pr;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, &pr) in self.obj.iter_mut().zip(pivot_row.iter()) {
                *v -= f * pr;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Run simplex iterations over columns `0..enterable`. Returns `false`
    /// if the objective is unbounded below.
    fn optimize(&mut self, enterable: usize, opts: &LpOptions) -> Result<bool> {
        let mut bland = false;
        let mut degenerate_run = 0usize;
        loop {
            let entering = if bland {
                (0..enterable).find(|&j| self.obj[j] < -opts.opt_tol)
            } else {
                let mut best = None;
                let mut best_val = -opts.opt_tol;
                for j in 0..enterable {
                    if self.obj[j] < best_val {
                        best_val = self.obj[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(c) = entering else { return Ok(true) };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let t = self.at(i, c);
                if t > opts.pivot_tol {
                    let ratio = self.rhs(i).max(0.0) / t;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((li, lr)) => {
                            let better = ratio < lr - 1e-14 * lr.abs().max(1.0)
                                || (ratio <= lr + 1e-14 * lr.abs().max(1.0) && self.basis[i] < self.basis[li]);
                            if better {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((r, ratio)) = leave else { return Ok(false) };
            if self.iterations >= self.max_iter {
                return Err(Error::LpInconclusive(format!("iteration cap {} reached", self.max_iter)));
            }
            if ratio == 0.0 {
                degenerate_run += 1;
                if degenerate_run > 50 {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
    }

    /// Value of the original variables.
    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (i, &bi) in self.basis.iter().enumerate() {
            if bi < self.n {
                x[bi] = self.rhs(i).max(0.0);
            }
        }
        x
    }

    /// Dual values for the original rows given the artificial cost used in
    /// the current pricing.
    fn duals(&self, artificial_cost: f64) -> Vec<f64> {
        (0..self.rows).map(|i| (artificial_cost - self.obj[self.n + i]) * self.row_factor[i]).collect()
    }

    fn phase_one(&mut self, opts: &LpOptions) -> Result<f64> {
        let mut cost = vec![0.0; self.n + self.rows];
        cost[self.n..].iter_mut().for_each(|v| *v = 1.0);
        self.price(&cost);
        self.optimize(self.n, opts)?;
        let violation: f64 = self.basis.iter().enumerate().filter(|(_, &b)| b >= self.n).map(|(i, _)| self.rhs(i).max(0.0)).sum();
        Ok(violation)
    }

    /// Pivot zero-level artificials out of the basis where possible.
    fn expel_artificials(&mut self, opts: &LpOptions) {
        for r in 0..self.rows {
            if self.basis[r] >= self.n {
                let mut best = None;
                let mut best_val = opts.pivot_tol.max(1e-9);
                for j in 0..self.n {
                    let v = self.at(r, j).abs();
                    if v > best_val {
                        best_val = v;
                        best = Some(j);
                    }
                }
                if let Some(j) = best {
                    self.pivot(r, j);
                }
            }
        }
    }
}

fn check_shapes(a: &DMatrix<f64>, b: &[f64], c: Option<&[f64]>) -> Result<()> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch { what: "right-hand side", expected: a.nrows(), found: b.len() });
    }
    if let Some(c) = c {
        if a.ncols() != c.len() {
            return Err(Error::DimensionMismatch { what: "cost vector", expected: a.ncols(), found: c.len() });
        }
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("LP data must be finite".into()));
    }
    Ok(())
}

/// Decide whether `{A x = b, x >= 0}` is nonempty (phase 1 only).
pub fn feasibility(a: &DMatrix<f64>, b: &[f64], opts: &LpOptions) -> Result<Feasibility> {
    check_shapes(a, b, None)?;
    let mut t = Tableau::new(a, b, opts);
    let violation = t.phase_one(opts)?;
    if violation > opts.feas_tol {
        Ok(Feasibility::Infeasible { violation, farkas: t.duals(1.0) })
    } else {
        Ok(Feasibility::Feasible { x: t.primal(), violation })
    }
}

/// Solve `min c^T x  s.t.  A x = b, x >= 0`.
pub fn solve(a: &DMatrix<f64>, b: &[f64], c: &[f64], opts: &LpOptions) -> Result<LpOutcome> {
    check_shapes(a, b, Some(c))?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("LP data must be finite".into()));
    }
    let mut t = Tableau::new(a, b, opts);
    let violation = t.phase_one(opts)?;
    if violation > opts.feas_tol {
        return Ok(LpOutcome::Infeasible { violation, farkas: t.duals(1.0) });
    }
    t.expel_artificials(opts);
    let mut cost = c.to_vec();
    cost.resize(t.n + t.rows, 0.0);
    t.price(&cost);
    if !t.optimize(t.n, opts)? {
        return Ok(LpOutcome::Unbounded);
    }
    let x = t.primal();
    let objective = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpOutcome::Optimal { x, objective, duals: t.duals(0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_optimum_and_duals() {
        // min -x1 - 2 x2, x1 + x2 + s1 = 4, x1 + 3 x2 + s2 = 6
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 0.0, 1.0, 3.0, 0.0, 1.0]);
        let b = [4.0, 6.0];
        let c = [-1.0, -2.0, 0.0, 0.0];
        match solve(&a, &b, &c, &LpOptions::default()).unwrap() {
            LpOutcome::Optimal { x, objective, duals } => {
                assert!((objective + 5.0).abs() < 1e-12);
                assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
                // strong duality and dual feasibility
                let by: f64 = b.iter().zip(&duals).map(|(u, v)| u * v).sum();
                assert!((by - objective).abs() < 1e-12);
                for j in 0..4 {
                    let aty: f64 = (0..2).map(|i| a[(i, j)] * duals[i]).sum();
                    assert!(c[j] - aty >= -1e-12);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_has_farkas_certificate() {
        // x1 + x2 = 1, x1 + x2 = 2
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = [1.0, 2.0];
        match feasibility(&a, &b, &LpOptions::default()).unwrap() {
            Feasibility::Infeasible { violation, farkas } => {
                assert!(violation > 0.1);
                for j in 0..2 {
                    assert!(farkas[0] * a[(0, j)] + farkas[1] * a[(1, j)] <= 1e-12);
                }
                assert!(farkas[0] * b[0] + farkas[1] * b[1] > 0.1);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_rhs_and_unbounded() {
        let a = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        match solve(&a, &[-2.0], &[0.0, -1.0], &LpOptions::default()).unwrap() {
            LpOutcome::Unbounded => {}
            other => panic!("{other:?}"),
        }
        match solve(&a, &[-2.0], &[1.0, 1.0], &LpOptions::default()).unwrap() {
            LpOutcome::Optimal { x, objective, .. } => {
                assert!((x[0] - 2.0).abs() < 1e-12 && x[1].abs() < 1e-12);
                assert!((objective - 2.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 1.0, 0.0, 0.0]);
        match solve(&a, &[1.0, 2.0, 0.25], &[0.0, 1.0, 2.0], &LpOptions::default()).unwrap() {
            LpOutcome::Optimal { x, objective, .. } => {
                assert!((objective - 0.75).abs() < 1e-12, "{x:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 0.0, 1.0, 3.0, 0.0, 1.0]);
        let opts = LpOptions { max_iter: Some(1), ..Default::default() };
        assert!(matches!(solve(&a, &[4.0, 6.0], &[-1.0, -2.0, 0.0, 0.0], &opts), Err(Error::LpInconclusive(_))));
    }
}
