//! Estimators of the large-scale fading vector from a covariance matrix.

mod cd;
mod nnls;

pub use cd::{
    coordinate_descent_mle, coordinate_descent_observed, coordinate_descent_regularized, coordinate_step,
    step_objective_change, StepEvent,
};
pub use nnls::nnls;

use serde::{Deserialize, Serialize};

use crate::linalg::{chol_logdet, hpd_cholesky, real_trace};
use crate::model::{check_gamma, true_covariance, CovMatrix, SequenceMatrix};
use crate::{Error, Result};

/// Output of an iterative estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub gamma_hat: Vec<f64>,
    /// Objective at the start followed by its value after each sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps_used: usize,
    pub converged: bool,
    /// Coordinate steps rejected by the positivity guard.
    pub rejected_steps: usize,
    /// Largest `|| Sigma^{-1}_tracked Sigma - I ||_F` seen before a refresh.
    pub max_inverse_drift: f64,
}

impl Estimate {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    None,
    L1 { lambda: f64 },
    LogSum { lambda: f64, epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_sweeps: usize,
    /// Stop once a sweep improves the objective by less than this.
    pub tol: f64,
    pub regularizer: Regularizer,
    pub seed: u64,
    /// Antenna count `M`; the penalty enters the objective as `R(gamma) / M`.
    pub n_antennas: usize,
    /// Refactorize the tracked inverse every this many sweeps.
    pub refresh_every: usize,
    /// Refactorize early when the tracked inverse drifts beyond this.
    pub drift_limit: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 500,
            tol: 1e-4,
            regularizer: Regularizer::None,
            seed: 0,
            n_antennas: 1,
            refresh_every: 50,
            drift_limit: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidArgument("max_sweeps must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {}", self.tol)));
        }
        if self.n_antennas == 0 {
            return Err(Error::InvalidArgument("n_antennas must be at least 1".into()));
        }
        if self.refresh_every == 0 {
            return Err(Error::InvalidArgument("refresh_every must be at least 1".into()));
        }
        match self.regularizer {
            Regularizer::None => {}
            Regularizer::L1 { lambda } => check_lambda(lambda)?,
            Regularizer::LogSum { lambda, epsilon } => {
                check_lambda(lambda)?;
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
                }
            }
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && !lambda.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be nonnegative, got {lambda}")))
    }
}

/// Thresholded activity decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub active_flags: Vec<bool>,
    pub threshold: f64,
}

impl Detection {
    pub fn active_indices(&self) -> Vec<usize> {
        self.active_flags.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect()
    }
}

/// Flag device `n` active iff `gamma_hat[n] >= l_th`.
pub fn detect(estimate: &Estimate, l_th: f64) -> Result<Detection> {
    threshold(&estimate.gamma_hat, l_th)
}

pub fn threshold(gamma_hat: &[f64], l_th: f64) -> Result<Detection> {
    if !(l_th >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {l_th}")));
    }
    Ok(Detection { active_flags: gamma_hat.iter().map(|&g| g >= l_th).collect(), threshold: l_th })
}

pub(crate) fn check_problem(s: &SequenceMatrix, cov: &CovMatrix, noise_var: f64) -> Result<()> {
    if cov.sigma.nrows() != s.seq_len() || cov.sigma.ncols() != s.seq_len() {
        return Err(Error::DimensionMismatch { what: "covariance", expected: s.seq_len(), found: cov.sigma.nrows() });
    }
    if !(noise_var > 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise_var must be positive, got {noise_var}")));
    }
    Ok(())
}

/// `log|Sigma| + tr(Sigma^{-1} Sigma_hat)` with `Sigma = S diag(gamma) S^H + noise_var I`.
pub fn mle_objective(s: &SequenceMatrix, gamma: &[f64], cov_sample: &CovMatrix, noise_var: f64) -> Result<f64> {
    check_problem(s, cov_sample, noise_var)?;
    let sigma = true_covariance(s, gamma, noise_var)?;
    let chol = hpd_cholesky(&sigma.sigma)?;
    let solved = chol.solve(&cov_sample.sigma);
    Ok(chol_logdet(&chol) + real_trace(&solved))
}

/// Gradient of [`mle_objective`]: entry `i` is
/// `s_i^H Sigma^{-1} s_i - s_i^H Sigma^{-1} Sigma_hat Sigma^{-1} s_i`.
pub fn mle_gradient(s: &SequenceMatrix, gamma: &[f64], cov_sample: &CovMatrix, noise_var: f64) -> Result<Vec<f64>> {
    check_problem(s, cov_sample, noise_var)?;
    check_gamma(gamma)?;
    let sigma = true_covariance(s, gamma, noise_var)?;
    let chol = hpd_cholesky(&sigma.sigma)?;
    let u = chol.solve(&s.entries);
    let v = &cov_sample.sigma * &u;
    Ok((0..s.n_columns())
        .map(|i| {
            let ui = u.column(i);
            s.entries.column(i).dotc(&ui).re - ui.dotc(&v.column(i)).re
        })
        .collect())
}

/// Penalty `R(gamma)` (not yet divided by `M`).
pub fn penalty(regularizer: Regularizer, gamma: &[f64]) -> f64 {
    match regularizer {
        Regularizer::None => 0.0,
        Regularizer::L1 { lambda } => lambda * gamma.iter().sum::<f64>(),
        Regularizer::LogSum { lambda, epsilon } => lambda * gamma.iter().map(|g| (epsilon + g).ln()).sum::<f64>(),
    }
}

/// `||Sigma(gamma) - Sigma_hat||_F^2`.
pub fn nnls_objective(s: &SequenceMatrix, gamma: &[f64], cov_sample: &CovMatrix, noise_var: f64) -> Result<f64> {
    check_problem(s, cov_sample, noise_var)?;
    let sigma = true_covariance(s, gamma, noise_var)?;
    Ok((sigma.sigma - &cov_sample.sigma).norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;
    use num_complex::Complex64;
    use crate::model::{CovProvenance, SequenceKind};

    fn scalar(v: f64) -> (SequenceMatrix, CovMatrix) {
        let s = SequenceMatrix {
            entries: CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)),
            kind: SequenceKind::Gaussian,
        };
        let c = CovMatrix { sigma: CMatrix::from_element(1, 1, Complex64::new(v, 0.0)), provenance: CovProvenance::Sample };
        (s, c)
    }

    #[test]
    fn objective_closed_forms() {
        let s = crate::model::gen_sequences(SequenceKind::Gaussian, 3, 5, 1).unwrap();
        let cov = true_covariance(&s, &[0.0; 5], 0.4).unwrap();
        let f = mle_objective(&s, &[0.0; 5], &cov, 0.4).unwrap();
        assert!((f - (3.0 * 0.4_f64.ln() + 3.0)).abs() < 1e-12);

        let (s, c) = scalar(2.5);
        let f = mle_objective(&s, &[0.7], &c, 0.3).unwrap();
        assert!((f - (1.0_f64.ln() + 2.5)).abs() < 1e-12);
    }

    #[test]
    fn gradient_closed_forms() {
        let (s, c) = scalar(2.5);
        let g = mle_gradient(&s, &[0.7], &c, 0.3).unwrap();
        assert!((g[0] - (1.0 - 2.5)).abs() < 1e-12);

        let s = crate::model::gen_sequences(SequenceKind::Gaussian, 4, 6, 2).unwrap();
        let gamma = [0.0, 1.0, 0.5, 0.0, 2.0, 0.1];
        let cov = true_covariance(&s, &gamma, 0.2).unwrap();
        let g = mle_gradient(&s, &gamma, &cov, 0.2).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-10), "{g:?}");
    }

    #[test]
    fn detect_edges_and_monotonicity() {
        let est = Estimate {
            gamma_hat: vec![0.0, 0.3, 1.2, 0.8],
            objective_trace: vec![0.0],
            sweeps_used: 0,
            converged: true,
            rejected_steps: 0,
            max_inverse_drift: 0.0,
        };
        assert!(detect(&est, 0.0).unwrap().active_flags.iter().all(|&a| a));
        assert!(detect(&est, 1.3).unwrap().active_flags.iter().all(|&a| !a));
        let mut prev = usize::MAX;
        for l in [0.0, 0.2, 0.3, 0.5, 0.8, 1.0, 1.2, 2.0] {
            let count = detect(&est, l).unwrap().active_indices().len();
            assert!(count <= prev);
            prev = count;
        }
        assert!(detect(&est, -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { max_sweeps: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { tol: 0.0, ..Default::default() }.validate().is_err());
        let bad = Regularizer::LogSum { lambda: 1.0, epsilon: 0.0 };
        assert!(SolverConfig { regularizer: bad, ..Default::default() }.validate().is_err());
    }
}
