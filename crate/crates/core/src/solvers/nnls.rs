use num_complex::Complex64;

use super::{check_problem, Estimate, SolverConfig};
use crate::linalg::{hermitian_part, CVector};
use crate::model::{CovMatrix, SequenceMatrix};
use crate::Result;

/// Nonnegative least-squares fit of `Sigma(gamma)` to `Sigma_hat` by cyclic
/// coordinate descent with exact clipped steps.
///
/// Only `max_sweeps` and `tol` of the config are used.
pub fn nnls(s: &SequenceMatrix, cov_sample: &CovMatrix, noise_var: f64, config: &SolverConfig) -> Result<Estimate> {
    check_problem(s, cov_sample, noise_var)?;
    config.validate()?;
    let (l, n) = s.entries.shape();
    let mut residual = -cov_sample.sigma.clone();
    for i in 0..l {
        residual[(i, i)] += Complex64::new(noise_var, 0.0);
    }
    let curvature: Vec<f64> = s.entries.column_iter().map(|c| c.norm_squared().powi(2)).collect();
    let mut gamma = vec![0.0; n];
    let mut trace = vec![residual.norm_squared()];
    let mut rs = CVector::zeros(l);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 1..=config.max_sweeps {
        sweeps = sweep;
        for k in 0..n {
            let q = curvature[k];
            if !(q > 0.0) {
                continue;
            }
            let sk = s.entries.column(k);
            rs.gemv(one, &residual, &sk, zero);
            let t = sk.dotc(&rs).re;
            let delta = (-t / q).max(-gamma[k]);
            if delta == 0.0 {
                continue;
            }
            residual.gerc(Complex64::new(delta, 0.0), &sk, &sk, one);
            gamma[k] = if delta == -gamma[k] { 0.0 } else { (gamma[k] + delta).max(0.0) };
        }
        hermitian_part(&mut residual);
        let objective = residual.norm_squared();
        let previous = *trace.last().expect("nonempty trace");
        trace.push(objective);
        if previous - objective < config.tol {
            converged = true;
            break;
        }
    }

    Ok(Estimate {
        gamma_hat: gamma,
        objective_trace: trace,
        sweeps_used: sweeps,
        converged,
        rejected_steps: 0,
        max_inverse_drift: 0.0,
    })
}
