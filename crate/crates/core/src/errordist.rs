//! Finite-`M` error law of the maximum likelihood estimator.
//!
//! `sqrt(M) (gamma_hat - gamma0)` is asymptotically the metric projection of
//! `x ~ N(0, M J^+)` onto the cone of vectors that are nonnegative on the
//! inactive set. This module samples `x`, projects it with [`project_qp`] and
//! turns the resulting error samples into missed-detection / false-alarm
//! curves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fisher::fisher_matrix;
use crate::linalg::sorted_symmetric_eigen;
use crate::model::{GroundTruth, SequenceMatrix};
use crate::phase::{check_condition_covmatch, ConditionOptions};
use crate::rng::{self, tag, StreamRng};
use crate::{par, Error, Result};

pub use crate::qp::{project_qp, qp_objective, QpSolution};

/// Eigenvalues below `-PSD_TOL * lambda_max` reject the input.
const PSD_TOL: f64 = 1e-8;

/// Draws `x = sum_r v_r sqrt(M / lambda_r) z_r`, the normal law with
/// covariance `M J^+`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSampler {
    /// `N x r`, retained eigenvectors as columns.
    pub eigvecs: DMatrix<f64>,
    pub eigvals: Vec<f64>,
    pub n_antennas: usize,
    pub rank_tol: f64,
}

impl GaussianSampler {
    pub fn new(j: &DMatrix<f64>, n_antennas: usize, rank_tol: f64) -> Result<Self> {
        if j.nrows() != j.ncols() {
            return Err(Error::DimensionMismatch { what: "Fisher matrix", expected: j.nrows(), found: j.ncols() });
        }
        if n_antennas == 0 {
            return Err(Error::InvalidArgument("M must be positive".into()));
        }
        if !(rank_tol > 0.0 && rank_tol < 1.0) {
            return Err(Error::InvalidArgument(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
        }
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("Fisher matrix must be finite".into()));
        }
        let mut sym = j.clone();
        crate::linalg::symmetric_part(&mut sym);
        let (values, vectors) = sorted_symmetric_eigen(&sym);
        let top = values.iter().copied().fold(0.0_f64, f64::max);
        let bottom = values.iter().copied().fold(0.0_f64, f64::min);
        if bottom < -PSD_TOL * top.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd { min_eigenvalue: bottom });
        }
        let keep = values.iter().take_while(|&&v| v > rank_tol * top && v > 0.0).count();
        Ok(Self {
            eigvecs: vectors.columns(0, keep).into_owned(),
            eigvals: values.iter().take(keep).copied().collect(),
            n_antennas,
            rank_tol,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigvecs.nrows()
    }

    pub fn rank(&self) -> usize {
        self.eigvals.len()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        let m = self.n_antennas as f64;
        let mut x = vec![0.0; self.dim()];
        for (r, &lambda) in self.eigvals.iter().enumerate() {
            let c = (m / lambda).sqrt() * rng::standard_normal(rng);
            for (xi, v) in x.iter_mut().zip(self.eigvecs.column(r).iter()) {
                *xi += c * v;
            }
        }
        x
    }

    /// Sample `i` of the family keyed by `seed`.
    pub fn sample_indexed(&self, seed: u64, i: usize) -> Vec<f64> {
        self.sample(&mut rng::stream(seed, &[tag::GAUSSIAN_SAMPLE, i as u64]))
    }
}

/// `n_samples x N` matrix whose rows are independent draws of
/// `N(0, M J^+)`.
pub fn sample_gaussian(j: &DMatrix<f64>, n_antennas: usize, n_samples: usize, rank_tol: f64, seed: u64) -> Result<DMatrix<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let sampler = GaussianSampler::new(j, n_antennas, rank_tol)?;
    let rows = par::map_indexed(n_samples, |i| sampler.sample_indexed(seed, i));
    Ok(stack_rows(&rows, j.nrows()))
}

fn stack_rows(rows: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistOptions {
    pub rank_tol: f64,
    pub qp_tol: f64,
}

impl Default for ErrorDistOptions {
    fn default() -> Self {
        Self { rank_tol: 1e-9, qp_tol: 1e-9 }
    }
}

/// Projected errors `mu* / sqrt(M)`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSampleSet {
    pub samples: DMatrix<f64>,
    pub inactive: Vec<usize>,
    pub active: Vec<usize>,
    /// For each inactive coordinate, the fraction of samples at exactly zero.
    pub zero_mass_per_inactive: Vec<f64>,
    pub n_antennas: usize,
    /// Whether the identifiability condition holds for the support; the
    /// prediction is meaningless otherwise.
    pub condition_satisfied: bool,
}

impl ErrorSampleSet {
    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    /// Pooled errors over the active coordinates.
    pub fn active_values(&self) -> Vec<f64> {
        pooled(&self.samples, &self.active)
    }

    /// Pooled errors over the inactive coordinates.
    pub fn inactive_values(&self) -> Vec<f64> {
        pooled(&self.samples, &self.inactive)
    }

    /// Fraction of all inactive-coordinate samples that are exactly zero.
    pub fn zero_mass(&self) -> f64 {
        if self.zero_mass_per_inactive.is_empty() {
            return 0.0;
        }
        self.zero_mass_per_inactive.iter().sum::<f64>() / self.zero_mass_per_inactive.len() as f64
    }

    /// Standard deviation of the pooled active-coordinate errors.
    pub fn active_std(&self) -> f64 {
        std_dev(&self.active_values())
    }
}

fn pooled(samples: &DMatrix<f64>, cols: &[usize]) -> Vec<f64> {
    cols.iter().flat_map(|&c| samples.column(c).iter().copied().collect::<Vec<_>>()).collect()
}

pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Predicted error samples for the instance `(S, truth)` at `M` antennas.
pub fn error_distribution(
    s: &SequenceMatrix,
    truth: &GroundTruth,
    noise_var: f64,
    n_antennas: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ErrorSampleSet> {
    error_distribution_with(s, truth, noise_var, n_antennas, n_samples, seed, &ErrorDistOptions::default())
}

pub fn error_distribution_with(
    s: &SequenceMatrix,
    truth: &GroundTruth,
    noise_var: f64,
    n_antennas: usize,
    n_samples: usize,
    seed: u64,
    opts: &ErrorDistOptions,
) -> Result<ErrorSampleSet> {
    if truth.n_devices() != s.n_columns() {
        return Err(Error::DimensionMismatch { what: "ground truth", expected: s.n_columns(), found: truth.n_devices() });
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let condition_satisfied = check_condition_covmatch(s, &truth.inactive, &ConditionOptions::default())
        .map(|v| v.satisfied)
        .unwrap_or(false);
    let fisher = fisher_matrix(s, &truth.gamma0, noise_var, n_antennas)?;
    let sampler = GaussianSampler::new(&fisher.j, n_antennas, opts.rank_tol)?;
    let root_m = (n_antennas as f64).sqrt();
    let rows = par::map_indexed(n_samples, |i| -> Result<Vec<f64>> {
        let x = sampler.sample_indexed(seed, i);
        let sol = project_qp(&x, &fisher.j, n_antennas, &truth.inactive, opts.qp_tol)?;
        Ok(sol.mu.iter().map(|v| v / root_m).collect())
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let samples = stack_rows(&rows, s.n_columns());
    let zero_mass_per_inactive = truth
        .inactive
        .iter()
        .map(|&i| samples.column(i).iter().filter(|&&v| v == 0.0).count() as f64 / n_samples as f64)
        .collect();
    Ok(ErrorSampleSet {
        samples,
        inactive: truth.inactive.clone(),
        active: truth.active.clone(),
        zero_mass_per_inactive,
        n_antennas,
        condition_satisfied,
    })
}

/// How a device counts as detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RocMode {
    /// One coordinate per device.
    ActivityOnly,
    /// `q` consecutive coordinates per device. An active device whose largest
    /// entry is not its transmitted sequence is a missed detection.
    JointData { q: usize },
}

impl RocMode {
    fn block(self) -> usize {
        match self {
            RocMode::ActivityOnly => 1,
            RocMode::JointData { q } => q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub pmd: Vec<f64>,
    pub pfa: Vec<f64>,
    pub mode: RocMode,
}

/// Per-device detection scores pooled over trials. A device is declared
/// active when its score reaches the threshold; an active device with the
/// wrong data gets score `-inf` so that it is always missed.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionScores {
    pub mode: RocMode,
    active: Vec<f64>,
    inactive: Vec<f64>,
    sorted: bool,
}

impl DetectionScores {
    pub fn new(mode: RocMode) -> Self {
        Self { mode, active: Vec::new(), inactive: Vec::new(), sorted: true }
    }

    /// Add one estimate of the lifted vector with its true coefficients.
    pub fn push(&mut self, estimate: &[f64], gamma0: &[f64]) -> Result<()> {
        let q = self.mode.block();
        if q == 0 {
            return Err(Error::InvalidArgument("block size must be positive".into()));
        }
        if estimate.len() != gamma0.len() {
            return Err(Error::DimensionMismatch { what: "estimate", expected: gamma0.len(), found: estimate.len() });
        }
        if estimate.len() % q != 0 {
            return Err(Error::InvalidDimensions(format!("length {} is not a multiple of Q={q}", estimate.len())));
        }
        for (est, truth) in estimate.chunks(q).zip(gamma0.chunks(q)) {
            let best = argmax(est);
            match truth.iter().position(|&g| g > 0.0) {
                Some(sent) if sent == best => self.active.push(est[best]),
                Some(_) => self.active.push(f64::NEG_INFINITY),
                None => self.inactive.push(est[best]),
            }
        }
        self.sorted = false;
        Ok(())
    }

    pub fn merge(&mut self, other: &DetectionScores) {
        self.active.extend_from_slice(&other.active);
        self.inactive.extend_from_slice(&other.inactive);
        self.sorted = false;
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn n_inactive(&self) -> usize {
        self.inactive.len()
    }

    fn ensure_sorted(&mut self) {
        if !self.sorted {
            self.active.sort_by(f64::total_cmp);
            self.inactive.sort_by(f64::total_cmp);
            self.sorted = true;
        }
    }

    fn rates_sorted(&self, l: f64) -> (f64, f64) {
        let fa = self.inactive.len() - self.inactive.partition_point(|&v| v < l);
        let md = self.active.partition_point(|&v| v < l);
        (ratio(fa, self.inactive.len()), ratio(md, self.active.len()))
    }

    /// `(pfa, pmd)` at threshold `l`.
    pub fn rates(&mut self, l: f64) -> (f64, f64) {
        self.ensure_sorted();
        self.rates_sorted(l)
    }

    pub fn roc(&mut self, thresholds: &[f64]) -> Result<RocCurve> {
        if self.active.is_empty() && self.inactive.is_empty() {
            return Err(Error::Empty("detection scores"));
        }
        if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidArgument("thresholds must be sorted ascending".into()));
        }
        self.ensure_sorted();
        let (pfa, pmd) = thresholds.iter().map(|&l| self.rates_sorted(l)).unzip();
        Ok(RocCurve { thresholds: thresholds.to_vec(), pmd, pfa, mode: self.mode })
    }

    /// Missed-detection probability at the smallest threshold whose
    /// false-alarm probability does not exceed `target_pfa`.
    pub fn pmd_at_pfa(&mut self, target_pfa: f64) -> Result<f64> {
        if self.inactive.is_empty() || self.active.is_empty() {
            return Err(Error::Empty("detection scores"));
        }
        self.ensure_sorted();
        let n = self.inactive.len();
        let allowed = (target_pfa.clamp(0.0, 1.0) * n as f64).floor() as usize;
        if allowed >= n {
            return Ok(self.rates_sorted(f64::NEG_INFINITY).1);
        }
        let l = self.inactive[n - 1 - allowed].next_up();
        Ok(self.rates_sorted(l).1)
    }

    /// `min_l max(pfa(l), pmd(l))`, the operating point where the two error
    /// probabilities meet.
    pub fn equal_error(&mut self) -> Result<f64> {
        if self.inactive.is_empty() || self.active.is_empty() {
            return Err(Error::Empty("detection scores"));
        }
        self.ensure_sorted();
        let candidates = self
            .inactive
            .iter()
            .chain(&self.active)
            .filter(|v| v.is_finite())
            .flat_map(|&v| [v, v.next_up()])
            .chain([f64::NEG_INFINITY, f64::INFINITY]);
        Ok(candidates
            .map(|l| {
                let (fa, md) = self.rates_sorted(l);
                fa.max(md)
            })
            .fold(f64::INFINITY, f64::min))
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Index of the largest entry, ties to the lowest index.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted curve: each sample row plus `gamma0` is treated as one
/// estimate.
pub fn predict_roc(errors: &ErrorSampleSet, truth: &GroundTruth, thresholds: &[f64], mode: RocMode) -> Result<RocCurve> {
    let mut scores = predicted_scores(errors, truth, mode)?;
    scores.roc(thresholds)
}

pub fn predicted_scores(errors: &ErrorSampleSet, truth: &GroundTruth, mode: RocMode) -> Result<DetectionScores> {
    if errors.n_samples() == 0 {
        return Err(Error::Empty("error samples"));
    }
    let mut scores = DetectionScores::new(mode);
    let mut row = vec![0.0; truth.n_devices()];
    for r in 0..errors.n_samples() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = truth.gamma0[c] + errors.samples[(r, c)];
        }
        scores.push(&row, &truth.gamma0)?;
    }
    Ok(scores)
}

/// Density histogram with equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    /// Bin densities integrating to one.
    pub density: Vec<f64>,
}

const MAX_BINS: usize = 10_000;

/// Freedman-Diaconis binning: width `2 IQR n^{-1/3}`, falling back to
/// Sturges' rule when the interquartile range vanishes.
pub fn histogram(values: &[f64]) -> Result<Histogram> {
    let mut v: Vec<f64> = values.to_vec();
    if v.is_empty() {
        return Err(Error::Empty("histogram values"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("histogram values must be finite".into()));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let (lo, hi) = (v[0], v[n - 1]);
    let range = hi - lo;
    let bins = if range == 0.0 {
        1
    } else {
        let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
        let width = 2.0 * iqr / (n as f64).cbrt();
        if width > 0.0 {
            ((range / width).ceil() as usize).clamp(1, MAX_BINS)
        } else {
            ((n as f64).log2().ceil() as usize + 1).min(MAX_BINS)
        }
    };
    let width = if range == 0.0 { 1.0 } else { range / bins as f64 };
    let start = if range == 0.0 { lo - 0.5 } else { lo };
    let edges: Vec<f64> = (0..=bins).map(|b| start + b as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &x in &v {
        let b = (((x - start) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let density = counts.iter().map(|&c| c as f64 / (n as f64 * width)).collect();
    Ok(Histogram { edges, density })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_ground_truth, gen_sequences, SequenceKind};
    use nalgebra::DVector;

    #[test]
    fn isotropic_variance() {
        let j = DMatrix::identity(3, 3) * 4.0;
        let x = sample_gaussian(&j, 2, 100_000, 1e-9, 1).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = x.column(c).iter().copied().collect();
            let var = std_dev(&col).powi(2);
            assert!((var / 0.5 - 1.0).abs() < 0.05, "{var}");
        }
    }

    #[test]
    fn rank_deficient_samples_avoid_null_space() {
        let b = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 1.0, 1.0]);
        let j = b.transpose() * &b;
        let null = crate::linalg::null_space(&j, 1e-9);
        assert_eq!(null.ncols(), 2);
        let x = sample_gaussian(&j, 3, 200, 1e-9, 4).unwrap();
        assert!((&x * &null).amax() < 1e-10);
    }

    #[test]
    fn rejects_indefinite_input() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(GaussianSampler::new(&j, 1, 1e-9), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn inactive_errors_have_point_mass() {
        let s = gen_sequences(SequenceKind::Gaussian, 8, 40, 1).unwrap();
        let truth = gen_ground_truth(40, 4, 1.0, 2).unwrap();
        let set = error_distribution(&s, &truth, 0.8, 64, 200, 3).unwrap();
        assert!(set.condition_satisfied);
        assert!(set.inactive_values().iter().all(|&v| v >= 0.0));
        assert!(set.zero_mass() > 0.0);
        assert!(set.zero_mass_per_inactive.iter().all(|&f| (0.0..=1.0).contains(&f)));
    }

    #[test]
    fn roc_endpoints_and_monotonicity() {
        let s = gen_sequences(SequenceKind::Gaussian, 8, 40, 1).unwrap();
        let truth = gen_ground_truth(40, 4, 1.0, 2).unwrap();
        let set = error_distribution(&s, &truth, 0.8, 100_000, 100, 3).unwrap();
        let max = set.samples.max() + 2.0;
        let ths: Vec<f64> = (0..=20).map(|i| i as f64 * max / 20.0).collect();
        let roc = predict_roc(&set, &truth, &ths, RocMode::ActivityOnly).unwrap();
        assert_eq!(roc.pfa[0], 1.0);
        assert_eq!(roc.pmd[0], 0.0);
        assert_eq!(*roc.pfa.last().unwrap(), 0.0);
        assert_eq!(*roc.pmd.last().unwrap(), 1.0);
        assert!(roc.pfa.windows(2).all(|w| w[1] <= w[0]));
        assert!(roc.pmd.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn joint_scores_count_wrong_data_as_missed() {
        let mut scores = DetectionScores::new(RocMode::JointData { q: 2 });
        // Device 0 sent index 1 and is decoded right, device 1 sent index 0
        // but index 1 wins, device 2 is silent.
        scores.push(&[0.1, 0.9, 0.2, 0.8, 0.3, 0.0], &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(scores.rates(0.5), (0.0, 0.5));
        assert_eq!(scores.rates(0.25), (1.0, 0.5));
        assert_eq!(scores.rates(1.0), (0.0, 1.0));
    }

    #[test]
    fn equal_error_and_matched_pfa() {
        let mut scores = DetectionScores::new(RocMode::ActivityOnly);
        scores.push(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(scores.equal_error().unwrap(), 0.0);
        let mut scores = DetectionScores::new(RocMode::ActivityOnly);
        scores.push(&[0.0, 0.7, 0.5, 0.6, 0.8, 1.0], &[0.0, 0.0, 1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((scores.equal_error().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((scores.pmd_at_pfa(0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((scores.pmd_at_pfa(0.34).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(scores.pmd_at_pfa(0.67).unwrap(), 0.0);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let mut r = rng::stream(1, &[0]);
        let v: Vec<f64> = (0..5000).map(|_| rng::standard_normal(&mut r)).collect();
        let h = histogram(&v).unwrap();
        let total: f64 = h.density.iter().zip(h.edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let h = histogram(&[0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(h.edges.len(), h.density.len() + 1);
        assert_eq!(histogram(&[2.0; 3]).unwrap().density, vec![1.0]);
    }

    #[test]
    fn ks_of_identical_and_disjoint_samples() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
    }
}
