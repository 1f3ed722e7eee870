//! Identifiability of a support: does the null space of the Fisher matrix
//! meet the cone of perturbations that keep inactive coordinates
//! nonnegative only at the origin?
//!
//! Two equivalent tests are provided, one on the Fisher matrix and one on
//! the real covariance-matching matrix `D`. Both reduce to deciding whether
//! the origin lies in the convex hull of a set of projected columns, settled
//! together with a certificate either way (see [`crate::hull`]).

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::fisher::{block_split, build_d, fisher_matrix};
use crate::linalg::{numerical_rank, sorted_symmetric_eigen, symmetric_part};
use crate::hull::{origin_in_hull, HullOutcome};
use crate::model::{default_noise_var, gen_ground_truth, gen_sequences, true_covariance, SequenceKind, SequenceMatrix};
use crate::rng::{derive_seed, tag};
use crate::solvers::{coordinate_descent_mle, SolverConfig};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMethod {
    FimLp,
    CovmatchLp,
    DimShortcut,
}

/// Which exact test a sweep runs after the dimension shortcut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    Fim,
    Covmatch,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionDiagnostics {
    /// Dimension of the null space, or a lower bound for the shortcut.
    pub dim_null: Option<usize>,
    /// Invertibility of the active Fisher block, or full column rank of the
    /// active columns of `D`.
    pub block_full_rank: Option<bool>,
    /// Normalized separation margin of the hull test.
    pub margin: Option<f64>,
    /// Residual of the hull weights when the origin is inside.
    pub violation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVerdict {
    pub satisfied: bool,
    pub method: ConditionMethod,
    /// Satisfied Fisher test: `x` with `G x > 0`. Unsatisfied covariance
    /// test: `x` with `D x = 0`, `sum(x_I) = 1`, `x_I >= 0`.
    pub certificate: Option<Vec<f64>>,
    pub diagnostics: ConditionDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionOptions {
    /// Relative cutoff for numerical rank.
    pub rank_tol: f64,
    /// Smallest certificate margin counted as strictly positive.
    pub strict_eps: f64,
    /// Reciprocal condition number below which the active block is singular.
    pub cond_tol: f64,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        Self { rank_tol: 1e-9, strict_eps: 1e-9, cond_tol: 1e-10 }
    }
}

fn complement(n: usize, set: &[usize]) -> Result<Vec<usize>> {
    let mut mark = vec![false; n];
    for &i in set {
        if i >= n {
            return Err(Error::InvalidArgument(format!("index {i} out of range for N={n}")));
        }
        mark[i] = true;
    }
    Ok((0..n).filter(|&i| !mark[i]).collect())
}

fn unsatisfied(method: ConditionMethod, diagnostics: ConditionDiagnostics) -> ConditionVerdict {
    ConditionVerdict { satisfied: false, method, certificate: None, diagnostics }
}

/// Dimension-counting shortcut: a null space of dimension at least `|I|`
/// (and nontrivial) must meet the cone. Returns `None` when inconclusive.
pub fn check_dim_necessary(m: &DMatrix<f64>, inactive: &[usize], rank_tol: f64) -> Option<ConditionVerdict> {
    let dim_null = m.ncols() - numerical_rank(m, rank_tol);
    shortcut(dim_null, inactive.len())
}

fn shortcut(dim_null: usize, n_inactive: usize) -> Option<ConditionVerdict> {
    (dim_null > 0 && dim_null >= n_inactive).then(|| {
        unsatisfied(
            ConditionMethod::DimShortcut,
            ConditionDiagnostics { dim_null: Some(dim_null), ..Default::default() },
        )
    })
}

/// Fisher-matrix test on the support `active` (coefficients set to one).
///
/// Requires the active block `C` of `J` to be invertible and the Schur
/// complement `G = A - B C^{-1} B^T` to admit `x` with `G x > 0`.
pub fn check_condition_fim(
    s: &SequenceMatrix,
    active: &[usize],
    noise_var: f64,
    opts: &ConditionOptions,
) -> Result<ConditionVerdict> {
    let n = s.n_columns();
    let inactive = complement(n, active)?;
    let mut gamma = vec![0.0; n];
    for &i in active {
        gamma[i] = 1.0;
    }
    let j = fisher_matrix(s, &gamma, noise_var, 1)?.j;
    let split = block_split(&j, &inactive)?;
    let j_norm = j.norm();
    let k = split.active.len();

    let g = if k > 0 {
        let (values, _) = sorted_symmetric_eigen(&split.c);
        let (top, bottom) = (values[0], values[k - 1]);
        if !(top > 0.0 && bottom / top > opts.cond_tol) {
            return Ok(unsatisfied(
                ConditionMethod::FimLp,
                ConditionDiagnostics { block_full_rank: Some(false), ..Default::default() },
            ));
        }
        let chol = Cholesky::new(split.c.clone())
            .ok_or_else(|| Error::Singular("active Fisher block failed to factor".into()))?;
        let x = chol.solve(&split.b.transpose());
        let mut g = &split.a - &split.b * x;
        symmetric_part(&mut g);
        g
    } else {
        split.a.clone()
    };

    let m = inactive.len();
    if m == 0 {
        return Ok(ConditionVerdict {
            satisfied: true,
            method: ConditionMethod::FimLp,
            certificate: Some(Vec::new()),
            diagnostics: ConditionDiagnostics { dim_null: Some(0), block_full_rank: Some(true), ..Default::default() },
        });
    }
    let (values, vectors) = sorted_symmetric_eigen(&g);
    let rank = values.iter().filter(|&&v| v > opts.rank_tol * j_norm).count();
    let mut diagnostics =
        ConditionDiagnostics { dim_null: Some(m - rank), block_full_rank: Some(true), ..Default::default() };
    if rank == 0 {
        return Ok(unsatisfied(ConditionMethod::FimLp, diagnostics));
    }
    let w = vectors.columns(0, rank).into_owned();
    match origin_in_hull(&w.transpose(), opts.strict_eps)? {
        HullOutcome::Contains { residual, .. } => {
            diagnostics.violation = Some(residual);
            Ok(unsatisfied(ConditionMethod::FimLp, diagnostics))
        }
        HullOutcome::Separated { direction, margin } => {
            diagnostics.margin = Some(margin);
            if !(margin > opts.strict_eps) {
                return Ok(unsatisfied(ConditionMethod::FimLp, diagnostics));
            }
            // G x = W y for x = W diag(1 / lambda) y.
            let scaled = DVector::from_iterator(rank, (0..rank).map(|i| direction[i] / values[i]));
            let x = &w * scaled;
            Ok(ConditionVerdict {
                satisfied: true,
                method: ConditionMethod::FimLp,
                certificate: Some(x.iter().copied().collect()),
                diagnostics,
            })
        }
    }
}

/// Covariance-matching test: the active columns of `D` must have full
/// column rank and `{D x = 0, sum(x_I) = 1, x_I >= 0}` must be empty.
///
/// The active coordinates are eliminated with a Householder QR of `D[:, I^c]`,
/// leaving a hull program over the inactive columns projected onto the
/// orthogonal complement of its range.
pub fn check_condition_covmatch(s: &SequenceMatrix, inactive: &[usize], opts: &ConditionOptions) -> Result<ConditionVerdict> {
    let n = s.n_columns();
    let active = complement(n, inactive)?;
    let inactive = complement(n, &active)?;
    let d = build_d(s);
    let rows = d.nrows();
    let k = active.len();
    let d_active = d.select_columns(&active);
    let d_inactive = d.select_columns(&inactive);
    let mut diagnostics = ConditionDiagnostics::default();

    if k > 0 && (k > rows || numerical_rank(&d_active, opts.rank_tol) < k) {
        diagnostics.block_full_rank = Some(false);
        return Ok(unsatisfied(ConditionMethod::CovmatchLp, diagnostics));
    }
    diagnostics.block_full_rank = Some(true);
    if inactive.is_empty() {
        return Ok(ConditionVerdict {
            satisfied: true,
            method: ConditionMethod::CovmatchLp,
            certificate: None,
            diagnostics,
        });
    }

    let (projected, qr) = if k > 0 {
        let qr = d_active.clone().qr();
        let mut rest = d_inactive.clone();
        qr.q_tr_mul(&mut rest);
        (rest, Some(qr))
    } else {
        (d_inactive.clone(), None)
    };
    let e = projected.rows(k, rows - k).into_owned();
    match origin_in_hull(&e, opts.strict_eps)? {
        HullOutcome::Separated { margin, .. } if margin > opts.strict_eps => {
            diagnostics.margin = Some(margin);
            Ok(ConditionVerdict { satisfied: true, method: ConditionMethod::CovmatchLp, certificate: None, diagnostics })
        }
        HullOutcome::Separated { margin, .. } => {
            diagnostics.margin = Some(margin);
            Ok(unsatisfied(ConditionMethod::CovmatchLp, diagnostics))
        }
        HullOutcome::Contains { weights: z, residual } => {
            diagnostics.violation = Some(residual);
            let mut x = vec![0.0; n];
            for (&i, &v) in inactive.iter().zip(&z) {
                x[i] = v;
            }
            if let Some(qr) = qr {
                let zv = DVector::from_column_slice(&z);
                let top = projected.rows(0, k) * zv;
                let r = qr.r();
                let xa = r.solve_upper_triangular(&(-top)).ok_or_else(|| Error::Singular("active block of D".into()))?;
                for (&i, &v) in active.iter().zip(xa.iter()) {
                    x[i] = v;
                }
            }
            Ok(ConditionVerdict {
                satisfied: false,
                method: ConditionMethod::CovmatchLp,
                certificate: Some(x),
                diagnostics,
            })
        }
    }
}

/// Dimension shortcut followed by the chosen exact test.
///
/// The shortcut uses the generic rank bound `dim null >= N - L^2`, which
/// needs no factorization.
pub fn check_condition(
    s: &SequenceMatrix,
    inactive: &[usize],
    noise_var: f64,
    method: SweepMethod,
    opts: &ConditionOptions,
) -> Result<ConditionVerdict> {
    let n = s.n_columns();
    let l2 = s.seq_len() * s.seq_len();
    if n > l2 {
        if let Some(v) = shortcut(n - l2, inactive.len()) {
            return Ok(v);
        }
    }
    match method {
        SweepMethod::Fim => {
            let active = complement(n, inactive)?;
            check_condition_fim(s, &active, noise_var, opts)
        }
        SweepMethod::Covmatch => check_condition_covmatch(s, inactive, opts),
    }
}

/// Success fractions over an `(L, K)` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub n_devices: usize,
    /// Bits embedded per device; axes are normalized by `N 2^b`.
    pub bits: u32,
    pub seq_lens: Vec<usize>,
    pub actives: Vec<usize>,
    pub trials: usize,
    /// `success_fraction[li][ki]`.
    pub success_fraction: Vec<Vec<f64>>,
    /// Trials whose test failed to conclude; they count as failures.
    pub inconclusive: Vec<Vec<usize>>,
}

impl PhaseGrid {
    fn lifted_size(&self) -> f64 {
        self.n_devices as f64 * f64::from(1u32 << self.bits)
    }

    pub fn l2_over_n(&self, li: usize) -> f64 {
        (self.seq_lens[li] * self.seq_lens[li]) as f64 / self.lifted_size()
    }

    pub fn k_over_n(&self, ki: usize) -> f64 {
        self.actives[ki] as f64 / self.lifted_size()
    }

    /// For each `L` row, the first `K` index whose success fraction drops
    /// below one half (`actives.len()` if none does).
    pub fn boundary_indices(&self) -> Vec<usize> {
        self.success_fraction
            .iter()
            .map(|row| row.iter().position(|&f| f < 0.5).unwrap_or(row.len()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepConfig {
    pub n_devices: usize,
    pub seq_lens: Vec<usize>,
    pub actives: Vec<usize>,
    pub trials: usize,
    pub method: SweepMethod,
    pub kind: SequenceKind,
    pub seed: u64,
}

impl PhaseSweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.n_devices == 0 || self.seq_lens.iter().any(|&l| l == 0) {
            return Err(Error::InvalidDimensions("N and every L must be positive".into()));
        }
        if let Some(&k) = self.actives.iter().find(|&&k| k > self.n_devices) {
            return Err(Error::InvalidDimensions(format!("K={k} exceeds N={}", self.n_devices)));
        }
        Ok(())
    }
}

/// Seed of one trial in the cell `(L, K)`; cells are keyed by value so a
/// cell's draws do not depend on the rest of the grid.
pub fn trial_seed(seed: u64, seq_len: usize, n_active: usize, trial: usize) -> u64 {
    derive_seed(seed, &[tag::TRIAL, seq_len as u64, n_active as u64, trial as u64])
}

/// Evaluate `success(L, K, trial_seed)` on every cell and trial.
pub(crate) fn run_grid<F>(
    n_devices: usize,
    bits: u32,
    seq_lens: &[usize],
    actives: &[usize],
    trials: usize,
    seed: u64,
    success: F,
) -> PhaseGrid
where
    F: Fn(usize, usize, u64) -> Result<bool> + Sync,
{
    let cells = seq_lens.len() * actives.len();
    let outcomes = par::map_indexed(cells * trials, |task| {
        let (cell, trial) = (task / trials, task % trials);
        let (li, ki) = (cell / actives.len(), cell % actives.len());
        success(seq_lens[li], actives[ki], trial_seed(seed, seq_lens[li], actives[ki], trial))
    });
    let mut success_fraction = vec![vec![0.0; actives.len()]; seq_lens.len()];
    let mut inconclusive = vec![vec![0; actives.len()]; seq_lens.len()];
    for (task, outcome) in outcomes.iter().enumerate() {
        let cell = task / trials;
        let (li, ki) = (cell / actives.len(), cell % actives.len());
        match outcome {
            Ok(true) => success_fraction[li][ki] += 1.0,
            Ok(false) => {}
            Err(_) => inconclusive[li][ki] += 1,
        }
    }
    for row in &mut success_fraction {
        for v in row.iter_mut() {
            *v /= trials as f64;
        }
    }
    PhaseGrid {
        n_devices,
        bits,
        seq_lens: seq_lens.to_vec(),
        actives: actives.to_vec(),
        trials,
        success_fraction,
        inconclusive,
    }
}

/// Identifiability success fractions of random instances over the grid.
pub fn phase_sweep(cfg: &PhaseSweepConfig) -> Result<PhaseGrid> {
    cfg.validate()?;
    let opts = ConditionOptions::default();
    Ok(run_grid(cfg.n_devices, 0, &cfg.seq_lens, &cfg.actives, cfg.trials, cfg.seed, |l, k, seed| {
        let s = gen_sequences(cfg.kind, l, cfg.n_devices, seed)?;
        let truth = gen_ground_truth(cfg.n_devices, k, 1.0, seed)?;
        let verdict = check_condition(&s, &truth.inactive, default_noise_var(l, 1.0), cfg.method, &opts)?;
        Ok(verdict.satisfied)
    }))
}

/// Exact-support recovery rates of coordinate descent fed with the true
/// covariance, on the same instances as [`phase_sweep`].
pub fn empirical_transition(cfg: &PhaseSweepConfig, solver: &SolverConfig) -> Result<PhaseGrid> {
    cfg.validate()?;
    solver.validate()?;
    Ok(run_grid(cfg.n_devices, 0, &cfg.seq_lens, &cfg.actives, cfg.trials, cfg.seed, |l, k, seed| {
        let s = gen_sequences(cfg.kind, l, cfg.n_devices, seed)?;
        let truth = gen_ground_truth(cfg.n_devices, k, 1.0, seed)?;
        let noise_var = default_noise_var(l, 1.0);
        let cov = true_covariance(&s, &truth.gamma0, noise_var)?;
        let solver = SolverConfig { seed: derive_seed(seed, &[tag::SOLVER]), ..solver.clone() };
        let est = coordinate_descent_mle(&s, &cov, noise_var, &solver)?;
        Ok(est.gamma_hat.iter().enumerate().all(|(i, &g)| (g >= 0.5) == truth.is_active(i)))
    }))
}
