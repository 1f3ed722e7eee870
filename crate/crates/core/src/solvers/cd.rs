//! Coordinate descent on the (optionally penalized) negative log-likelihood
//! with a tracked inverse covariance.

use num_complex::Complex64;
use rand::seq::SliceRandom;

use super::{check_problem, penalty, Estimate, Regularizer, SolverConfig};
use crate::linalg::{chol_logdet, hermitian_part, hpd_cholesky, identity_residual, CMatrix, CVector};
use crate::model::{true_covariance, CovMatrix, SequenceMatrix};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// One accepted coordinate update, reported to observers.
#[derive(Debug)]
pub struct StepEvent<'a> {
    pub sweep: usize,
    pub index: usize,
    pub delta: f64,
    pub gamma: &'a [f64],
    /// Incrementally tracked objective after the update.
    pub objective: f64,
}

/// Coordinate-descent maximum-likelihood estimate. Any regularizer in
/// `config` is ignored.
pub fn coordinate_descent_mle(
    s: &SequenceMatrix,
    cov_sample: &CovMatrix,
    noise_var: f64,
    config: &SolverConfig,
) -> Result<Estimate> {
    let config = SolverConfig { regularizer: Regularizer::None, ..config.clone() };
    run(s, cov_sample, noise_var, &config, None)
}

/// Coordinate descent on the objective plus `R(gamma) / M`.
pub fn coordinate_descent_regularized(
    s: &SequenceMatrix,
    cov_sample: &CovMatrix,
    noise_var: f64,
    config: &SolverConfig,
) -> Result<Estimate> {
    if config.regularizer == Regularizer::None {
        return Err(Error::InvalidArgument("regularized solver needs a regularizer".into()));
    }
    run(s, cov_sample, noise_var, config, None)
}

/// Same as the solvers above (honouring `config.regularizer`), calling
/// `observer` after every accepted coordinate update.
pub fn coordinate_descent_observed(
    s: &SequenceMatrix,
    cov_sample: &CovMatrix,
    noise_var: f64,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<Estimate> {
    run(s, cov_sample, noise_var, config, Some(observer))
}

fn penalty_weight(config: &SolverConfig) -> f64 {
    match config.regularizer {
        Regularizer::None => 0.0,
        Regularizer::L1 { lambda } | Regularizer::LogSum { lambda, .. } => lambda / config.n_antennas as f64,
    }
}

/// Minimizer over `delta >= -gamma` of the one-dimensional restriction,
/// where `a = s^H Sigma^{-1} s`, `b = s^H Sigma^{-1} Sigma_hat Sigma^{-1} s`
/// and `c` is the penalty weight `lambda / M`.
pub fn coordinate_step(regularizer: Regularizer, a: f64, b: f64, gamma: f64, c: f64) -> f64 {
    if !(a > 0.0) {
        return 0.0;
    }
    match regularizer {
        _ if c == 0.0 => ((b - a) / (a * a)).max(-gamma),
        Regularizer::None => ((b - a) / (a * a)).max(-gamma),
        Regularizer::L1 { .. } => {
            // Stationarity in w = 1 + a delta: c w^2 + a w - b = 0.
            let w = 2.0 * b / (a + (a * a + 4.0 * c * b).sqrt());
            ((w - 1.0) / a).max(-gamma)
        }
        Regularizer::LogSum { epsilon, .. } => log_sum_step(a, b, gamma, c, epsilon),
    }
}

fn log_sum_step(a: f64, b: f64, gamma: f64, c: f64, epsilon: f64) -> f64 {
    let p = a - b;
    let q = epsilon + gamma;
    // (p + a^2 d)(q + d) + c (1 + a d)^2 = 0
    let qa = a * a * (1.0 + c);
    let qb = p + a * a * q + 2.0 * a * c;
    let qc = p * q + c;
    let mut best = -gamma;
    let mut best_val = step_objective_change(Regularizer::LogSum { lambda: 0.0, epsilon }, a, b, gamma, -gamma, c);
    let disc = qb * qb - 4.0 * qa * qc;
    if disc >= 0.0 {
        let r = -0.5 * (qb + qb.signum() * disc.sqrt());
        let mut roots = Vec::with_capacity(2);
        if r != 0.0 {
            roots.push(qc / r);
        }
        roots.push(r / qa);
        for d in roots {
            if d.is_finite() && d > -gamma {
                let val = step_objective_change(Regularizer::LogSum { lambda: 0.0, epsilon }, a, b, gamma, d, c);
                if val < best_val {
                    best = d;
                    best_val = val;
                }
            }
        }
    }
    best
}

/// Change of the penalized objective when `gamma` moves by `delta`.
/// The penalty weight is `c`; the lambda inside `regularizer` is unused.
pub fn step_objective_change(regularizer: Regularizer, a: f64, b: f64, gamma: f64, delta: f64, c: f64) -> f64 {
    let w = 1.0 + a * delta;
    let base = w.ln() - delta * b / w;
    match regularizer {
        Regularizer::None => base,
        Regularizer::L1 { .. } => base + c * delta,
        Regularizer::LogSum { epsilon, .. } => {
            if c == 0.0 {
                base
            } else {
                base + c * ((epsilon + gamma + delta) / (epsilon + gamma)).ln()
            }
        }
    }
}

struct Refresh {
    objective: f64,
    inverse: CMatrix,
    drift: f64,
}

fn exact_state(
    s: &SequenceMatrix,
    cov: &CovMatrix,
    gamma: &[f64],
    noise_var: f64,
    tracked: &CMatrix,
) -> Result<Refresh> {
    let sigma = true_covariance(s, gamma, noise_var)?;
    let chol = hpd_cholesky(&sigma.sigma)?;
    let logdet = chol_logdet(&chol);
    let mut inverse = chol.inverse();
    hermitian_part(&mut inverse);
    let trace: f64 = inverse.iter().zip(cov.sigma.transpose().iter()).map(|(x, y)| (x * y).re).sum();
    let drift = identity_residual(tracked, &sigma.sigma);
    Ok(Refresh { objective: logdet + trace, inverse, drift })
}

fn run(
    s: &SequenceMatrix,
    cov: &CovMatrix,
    noise_var: f64,
    config: &SolverConfig,
    mut observer: Option<&mut dyn FnMut(&StepEvent<'_>)>,
) -> Result<Estimate> {
    check_problem(s, cov, noise_var)?;
    config.validate()?;
    let (l, n) = s.entries.shape();
    let reg = config.regularizer;
    let c = penalty_weight(config);
    let scaled_penalty = |g: &[f64]| if c == 0.0 { 0.0 } else { penalty(reg, g) / config.n_antennas as f64 };

    let mut gamma = vec![0.0; n];
    let mut sinv = CMatrix::identity(l, l) * Complex64::new(1.0 / noise_var, 0.0);
    let mut objective = exact_state(s, cov, &gamma, noise_var, &sinv)?.objective + scaled_penalty(&gamma);
    let mut trace = vec![objective];
    let mut order: Vec<usize> = (0..n).collect();
    let mut perm_rng = rng::stream(config.seed, &[tag::PERMUTATION]);
    let mut u = CVector::zeros(l);
    let mut v = CVector::zeros(l);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut rejected = 0;
    let mut max_drift: f64 = 0.0;
    let mut converged = false;
    let mut sweeps = 0;

    for sweep in 1..=config.max_sweeps {
        sweeps = sweep;
        order.shuffle(&mut perm_rng);
        for &k in &order {
            let sk = s.entries.column(k);
            u.gemv(one, &sinv, &sk, zero);
            let a = sk.dotc(&u).re;
            if !(a > 0.0) {
                continue;
            }
            v.gemv(one, &cov.sigma, &u, zero);
            let b = u.dotc(&v).re;
            let delta = coordinate_step(reg, a, b, gamma[k], c);
            if delta == 0.0 || !delta.is_finite() {
                continue;
            }
            let w = 1.0 + delta * a;
            if !(w > 0.0) {
                rejected += 1;
                continue;
            }
            objective += step_objective_change(reg, a, b, gamma[k], delta, c);
            sinv.gerc(Complex64::new(-delta / w, 0.0), &u, &u, one);
            gamma[k] = if delta == -gamma[k] { 0.0 } else { (gamma[k] + delta).max(0.0) };
            if let Some(obs) = observer.as_mut() {
                obs(&StepEvent { sweep, index: k, delta, gamma: &gamma, objective });
            }
        }
        let state = exact_state(s, cov, &gamma, noise_var, &sinv)?;
        max_drift = max_drift.max(state.drift);
        if state.drift > config.drift_limit || sweep % config.refresh_every == 0 {
            sinv = state.inverse;
        } else {
            hermitian_part(&mut sinv);
        }
        let previous = objective_before(&trace);
        objective = state.objective + scaled_penalty(&gamma);
        trace.push(objective);
        if previous - objective < config.tol {
            converged = true;
            break;
        }
    }

    Ok(Estimate { gamma_hat: gamma, objective_trace: trace, sweeps_used: sweeps, converged, rejected_steps: rejected, max_inverse_drift: max_drift })
}

fn objective_before(trace: &[f64]) -> f64 {
    *trace.last().expect("nonempty trace")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_ground_truth, gen_sequences, CovProvenance, SequenceKind};
    use crate::solvers::mle_objective;

    fn scalar_problem(v: f64) -> (SequenceMatrix, CovMatrix) {
        let s = SequenceMatrix { entries: CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)), kind: SequenceKind::Gaussian };
        let c = CovMatrix { sigma: CMatrix::from_element(1, 1, Complex64::new(v, 0.0)), provenance: CovProvenance::Sample };
        (s, c)
    }

    #[test]
    fn scalar_closed_form() {
        for v in [0.0, 0.1, 0.5, 1.0, 3.7] {
            let (s, c) = scalar_problem(v);
            let est = coordinate_descent_mle(&s, &c, 0.5, &SolverConfig::default()).unwrap();
            assert!((est.gamma_hat[0] - (v - 0.5_f64).max(0.0)).abs() < 1e-12, "v={v}");
        }
    }

    #[test]
    fn recovers_support_from_true_covariance() {
        let s = gen_sequences(SequenceKind::Gaussian, 8, 16, 4).unwrap();
        let truth = gen_ground_truth(16, 4, 1.0, 5).unwrap();
        let cov = true_covariance(&s, &truth.gamma0, 0.8).unwrap();
        let cfg = SolverConfig { tol: 1e-13, max_sweeps: 2000, ..SolverConfig::with_seed(1) };
        let est = coordinate_descent_mle(&s, &cov, 0.8, &cfg).unwrap();
        let err = est.gamma_hat.iter().zip(&truth.gamma0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-4, "err {err}");
        for i in 0..16 {
            assert_eq!(est.gamma_hat[i] > 0.5, truth.is_active(i));
        }
    }

    #[test]
    fn trace_is_non_increasing_and_tracked_objective_is_exact() {
        let s = gen_sequences(SequenceKind::Gaussian, 6, 30, 2).unwrap();
        let truth = gen_ground_truth(30, 5, 1.0, 3).unwrap();
        let y = crate::model::simulate(&s, &truth, 16, 0.6, 9).unwrap();
        let cov = crate::model::sample_covariance(&y).unwrap();
        let mut last = f64::INFINITY;
        let mut worst: f64 = 0.0;
        let mut check = |e: &StepEvent<'_>| {
            let exact = mle_objective(&s, e.gamma, &cov, 0.6).unwrap();
            assert!(exact <= last + 1e-9);
            worst = worst.max((exact - e.objective).abs());
            last = exact;
        };
        let est = coordinate_descent_observed(&s, &cov, 0.6, &SolverConfig::with_seed(3), &mut check).unwrap();
        assert!(worst < 1e-8, "{worst}");
        for w in est.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(est.max_inverse_drift < 1e-6);
    }

    #[test]
    fn zero_lambda_matches_plain() {
        let s = gen_sequences(SequenceKind::Gaussian, 5, 20, 7).unwrap();
        let truth = gen_ground_truth(20, 3, 1.0, 8).unwrap();
        let y = crate::model::simulate(&s, &truth, 8, 0.5, 9).unwrap();
        let cov = crate::model::sample_covariance(&y).unwrap();
        let plain = coordinate_descent_mle(&s, &cov, 0.5, &SolverConfig::with_seed(4)).unwrap();
        for reg in [Regularizer::L1 { lambda: 0.0 }, Regularizer::LogSum { lambda: 0.0, epsilon: 0.1 }] {
            let cfg = SolverConfig { regularizer: reg, ..SolverConfig::with_seed(4) };
            let r = coordinate_descent_regularized(&s, &cov, 0.5, &cfg).unwrap();
            assert_eq!(r.gamma_hat, plain.gamma_hat);
        }
    }

    #[test]
    fn huge_l1_zeroes_everything() {
        let s = gen_sequences(SequenceKind::Gaussian, 5, 20, 7).unwrap();
        let truth = gen_ground_truth(20, 3, 1.0, 8).unwrap();
        let cov = true_covariance(&s, &truth.gamma0, 0.5).unwrap();
        let cfg = SolverConfig { regularizer: Regularizer::L1 { lambda: 1e12 }, ..SolverConfig::with_seed(4) };
        let r = coordinate_descent_regularized(&s, &cov, 0.5, &cfg).unwrap();
        assert!(r.gamma_hat.iter().all(|&g| g == 0.0));
        assert!(coordinate_descent_regularized(&s, &cov, 0.5, &SolverConfig::default()).is_err());
    }

    #[test]
    fn steps_are_locally_optimal() {
        let regs = [
            Regularizer::None,
            Regularizer::L1 { lambda: 1.0 },
            Regularizer::LogSum { lambda: 1.0, epsilon: 0.05 },
        ];
        for reg in regs {
            for &(a, b, g, c) in &[(1.0, 2.0, 0.0, 0.3), (2.0, 0.5, 0.4, 0.1), (0.7, 0.7, 1.0, 2.0), (3.0, 40.0, 0.2, 0.05)] {
                let d = coordinate_step(reg, a, b, g, c);
                assert!(d >= -g);
                let f = step_objective_change(reg, a, b, g, d, c);
                for p in [-1e-3, 1e-3] {
                    let dp = d + p;
                    if dp >= -g {
                        assert!(step_objective_change(reg, a, b, g, dp, c) >= f - 1e-12, "{reg:?} {a} {b} {g} {c}");
                    }
                }
            }
        }
    }
}
