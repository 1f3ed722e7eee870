//! Synthetic random-access instances: pilot matrices, activity patterns,
//! Rayleigh block-fading channels, received pilot signals and covariances.
//!
//! All draws are pure functions of their inputs and a seed (see [`crate::rng`]).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{hermitian_part, CMatrix};
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Sizes and powers of one random-access scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// N, number of potential devices.
    pub n_devices: usize,
    /// K, number of active devices.
    pub n_active: usize,
    /// L, pilot sequence length.
    pub seq_len: usize,
    /// M, base-station antennas.
    pub n_antennas: usize,
    /// Noise variance, normalized by the device transmit power.
    pub noise_var: f64,
    /// Large-scale coefficient shared by all active devices.
    pub gamma_active: f64,
}

impl SystemConfig {
    /// Config with the default power setting: unit coefficient and a
    /// per-sequence SNR `gamma * L / noise_var` of 10 dB.
    pub fn new(n_devices: usize, n_active: usize, seq_len: usize, n_antennas: usize) -> Result<Self> {
        let cfg = Self {
            n_devices,
            n_active,
            seq_len,
            n_antennas,
            noise_var: default_noise_var(seq_len, 1.0),
            gamma_active: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 || self.seq_len == 0 || self.n_antennas == 0 {
            return Err(Error::InvalidDimensions(format!(
                "N={}, L={}, M={} must all be positive",
                self.n_devices, self.seq_len, self.n_antennas
            )));
        }
        if self.n_active > self.n_devices {
            return Err(Error::InvalidDimensions(format!("K={} exceeds N={}", self.n_active, self.n_devices)));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_var must be positive, got {}", self.noise_var)));
        }
        if !(self.gamma_active > 0.0 && self.gamma_active.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma_active must be positive, got {}",
                self.gamma_active
            )));
        }
        Ok(())
    }
}

/// Noise variance giving `gamma_active * seq_len / noise_var = 10` (10 dB).
pub fn default_noise_var(seq_len: usize, gamma_active: f64) -> f64 {
    gamma_active * seq_len as f64 / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// i.i.d. CN(0, 1) entries.
    Gaussian,
    /// Entries uniform on `{±1 ± j}`.
    QpskAlphabet,
    /// `L` random rows of a DFT matrix; `dft_size` defaults to `N`.
    PartialDft { dft_size: Option<usize> },
    /// Columns uniform on the complex sphere of radius `sqrt(L)`.
    Sphere,
}

impl fmt::Display for SequenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SequenceKind::Gaussian => f.write_str("gaussian"),
            SequenceKind::QpskAlphabet => f.write_str("qpsk_alphabet"),
            SequenceKind::PartialDft { .. } => f.write_str("partial_dft"),
            SequenceKind::Sphere => f.write_str("sphere"),
        }
    }
}

impl FromStr for SequenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(SequenceKind::Gaussian),
            "qpsk_alphabet" | "qpsk" => Ok(SequenceKind::QpskAlphabet),
            "partial_dft" | "dft" => Ok(SequenceKind::PartialDft { dft_size: None }),
            "sphere" => Ok(SequenceKind::Sphere),
            other => Err(Error::InvalidArgument(format!("unknown sequence kind '{other}'"))),
        }
    }
}

/// The `L x N` signature sequence matrix `S`; column `n` is device `n`'s pilot.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMatrix {
    pub entries: CMatrix,
    pub kind: SequenceKind,
}

impl SequenceMatrix {
    pub fn seq_len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.entries.ncols()
    }
}

/// Draw a pilot matrix.
pub fn gen_sequences(kind: SequenceKind, seq_len: usize, n_columns: usize, seed: u64) -> Result<SequenceMatrix> {
    if seq_len == 0 || n_columns == 0 {
        return Err(Error::InvalidDimensions(format!("L={seq_len}, N={n_columns} must be positive")));
    }
    let mut rng = rng::stream(seed, &[tag::SEQUENCES]);
    let entries = match kind {
        SequenceKind::Gaussian => {
            CMatrix::from_fn(seq_len, n_columns, |_, _| rng::complex_normal(&mut rng))
        }
        SequenceKind::QpskAlphabet => CMatrix::from_fn(seq_len, n_columns, |_, _| {
            let re = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let im = if rng.random::<bool>() { 1.0 } else { -1.0 };
            Complex64::new(re, im)
        }),
        SequenceKind::Sphere => {
            let mut m = CMatrix::from_fn(seq_len, n_columns, |_, _| rng::complex_normal(&mut rng));
            let radius = (seq_len as f64).sqrt();
            for mut col in m.column_iter_mut() {
                let norm = col.norm();
                col *= Complex64::new(radius / norm, 0.0);
            }
            m
        }
        SequenceKind::PartialDft { dft_size } => {
            let size = dft_size.unwrap_or(n_columns);
            if size < n_columns {
                return Err(Error::DftTooSmall { dft_size: size, needed: n_columns });
            }
            if size < seq_len {
                return Err(Error::DftTooSmall { dft_size: size, needed: seq_len });
            }
            let mut row_rng = rng::stream(seed, &[tag::DFT_ROWS]);
            let mut rows = index::sample(&mut row_rng, size, seq_len).into_vec();
            rows.sort_unstable();
            CMatrix::from_fn(seq_len, n_columns, |r, c| {
                // Reduce the phase index modulo the size before scaling to keep
                // the angle small and exact for large sizes.
                let k = (rows[r] as u128 * c as u128 % size as u128) as f64;
                Complex64::from_polar(1.0, -2.0 * PI * k / size as f64)
            })
        }
    };
    Ok(SequenceMatrix { entries, kind })
}

/// True activity pattern `gamma0` with its inactive index set (zeros) and
/// active index set (support), both sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub gamma0: Vec<f64>,
    pub inactive: Vec<usize>,
    pub active: Vec<usize>,
}

impl GroundTruth {
    /// Build from an explicit nonnegative coefficient vector (heterogeneous
    /// large-scale fading).
    pub fn from_gamma(gamma0: Vec<f64>) -> Result<Self> {
        check_gamma(&gamma0)?;
        let (active, inactive): (Vec<usize>, Vec<usize>) = (0..gamma0.len()).partition(|&i| gamma0[i] > 0.0);
        Ok(Self { gamma0, inactive, active })
    }

    /// Homogeneous coefficients on a given support.
    pub fn from_support(n_devices: usize, active: &[usize], gamma_active: f64) -> Result<Self> {
        let mut gamma0 = vec![0.0; n_devices];
        for &i in active {
            if i >= n_devices {
                return Err(Error::InvalidArgument(format!("support index {i} out of range for N={n_devices}")));
            }
            gamma0[i] = gamma_active;
        }
        Self::from_gamma(gamma0)
    }

    pub fn n_devices(&self) -> usize {
        self.gamma0.len()
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.gamma0[i] > 0.0
    }
}

pub(crate) fn check_gamma(gamma: &[f64]) -> Result<()> {
    for (index, &value) in gamma.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::NegativeGamma { index, value });
        }
    }
    Ok(())
}

/// Draw `K` active devices uniformly; active coefficients all equal
/// `gamma_active`.
pub fn gen_ground_truth(n_devices: usize, n_active: usize, gamma_active: f64, seed: u64) -> Result<GroundTruth> {
    if n_active > n_devices {
        return Err(Error::InvalidDimensions(format!("K={n_active} exceeds N={n_devices}")));
    }
    if !(gamma_active > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma_active must be positive, got {gamma_active}")));
    }
    let mut rng = rng::stream(seed, &[tag::SUPPORT]);
    let mut support = index::sample(&mut rng, n_devices, n_active).into_vec();
    support.sort_unstable();
    GroundTruth::from_support(n_devices, &support, gamma_active)
}

/// Pilot-phase observation `Y` (`L x M`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    pub y: CMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovProvenance {
    Sample,
    TrueLimit,
}

/// Hermitian `L x L` covariance, either a sample estimate or the `M -> inf`
/// limit.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    pub sigma: CMatrix,
    pub provenance: CovProvenance,
}

impl CovMatrix {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }
}

/// `S diag(gamma) S^H + noise_var I`.
pub fn true_covariance(s: &SequenceMatrix, gamma: &[f64], noise_var: f64) -> Result<CovMatrix> {
    if gamma.len() != s.n_columns() {
        return Err(Error::DimensionMismatch { what: "gamma", expected: s.n_columns(), found: gamma.len() });
    }
    check_gamma(gamma)?;
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_var must be nonnegative, got {noise_var}")));
    }
    let l = s.seq_len();
    let mut sigma = CMatrix::from_diagonal_element(l, l, Complex64::new(noise_var, 0.0));
    for (n, &g) in gamma.iter().enumerate() {
        if g > 0.0 {
            let col = s.entries.column(n);
            sigma.gerc(Complex64::new(g, 0.0), &col, &col, Complex64::new(1.0, 0.0));
        }
    }
    hermitian_part(&mut sigma);
    Ok(CovMatrix { sigma, provenance: CovProvenance::TrueLimit })
}

/// Draw `Y = S diag(gamma0)^{1/2} H + W` with Rayleigh `H` (unit variance)
/// and noise `W` of variance `noise_var`.
///
/// Only rows of `H` belonging to active devices are drawn; channel rows for
/// active devices are drawn in increasing device order, then the noise.
pub fn simulate(
    s: &SequenceMatrix,
    truth: &GroundTruth,
    n_antennas: usize,
    noise_var: f64,
    seed: u64,
) -> Result<ReceivedSignal> {
    if n_antennas == 0 {
        return Err(Error::InvalidDimensions("M must be positive".into()));
    }
    if truth.n_devices() != s.n_columns() {
        return Err(Error::DimensionMismatch { what: "ground truth", expected: s.n_columns(), found: truth.n_devices() });
    }
    if !(noise_var >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_var must be nonnegative, got {noise_var}")));
    }
    let l = s.seq_len();
    let mut channel_rng = rng::stream(seed, &[tag::CHANNEL]);
    let mut noise_rng = rng::stream(seed, &[tag::NOISE]);
    let noise_std = noise_var.sqrt();
    let mut y = CMatrix::from_fn(l, n_antennas, |_, _| rng::complex_normal(&mut noise_rng) * noise_std);
    let mut h_row = nalgebra::DVector::<Complex64>::zeros(n_antennas);
    for &n in &truth.active {
        for h in h_row.iter_mut() {
            *h = rng::complex_normal(&mut channel_rng);
        }
        let amp = Complex64::new(truth.gamma0[n].sqrt(), 0.0);
        // y += sqrt(gamma) * s_n * h^T
        y.ger(amp, &s.entries.column(n), &h_row, Complex64::new(1.0, 0.0));
    }
    Ok(ReceivedSignal { y })
}

/// `Y Y^H / M`, symmetrized.
pub fn sample_covariance(signal: &ReceivedSignal) -> Result<CovMatrix> {
    let y = &signal.y;
    if y.nrows() == 0 || y.ncols() == 0 {
        return Err(Error::Empty("received signal"));
    }
    let mut sigma = y * y.adjoint() / Complex64::new(y.ncols() as f64, 0.0);
    hermitian_part(&mut sigma);
    Ok(CovMatrix { sigma, provenance: CovProvenance::Sample })
}

/// Real `L x N` view used by tests and diagnostics: `|s_ln|^2`.
pub fn power_profile(s: &SequenceMatrix) -> DMatrix<f64> {
    s.entries.map(|z| z.norm_sqr())
}
