//! Joint activity and data detection. Each device owns `Q = 2^b` sequences
//! and sends one of them, so the sequence index carries `b` bits. Detection
//! estimates the `NQ`-long lifted coefficient vector and then keeps the
//! largest entry of every block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::errordist::argmax;
use crate::model::{
    default_noise_var, gen_ground_truth, gen_sequences, CovMatrix, GroundTruth, SequenceKind, SequenceMatrix,
    SystemConfig,
};
use crate::phase::{check_condition, run_grid, ConditionOptions, PhaseGrid, PhaseSweepConfig};
use crate::rng::{self, tag};
use crate::solvers::{coordinate_descent_mle, Estimate, SolverConfig};
use crate::{Error, Result};

/// Largest supported number of bits per device.
pub const MAX_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub bits: u32,
    pub system: SystemConfig,
}

impl EmbedConfig {
    pub fn new(bits: u32, system: SystemConfig) -> Result<Self> {
        let cfg = Self { bits, system };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_bits(self.bits)?;
        self.system.validate()
    }

    pub fn q(&self) -> usize {
        1 << self.bits
    }

    pub fn lifted_dim(&self) -> usize {
        self.system.n_devices * self.q()
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if bits > MAX_BITS {
        return Err(Error::InvalidArgument(format!("at most {MAX_BITS} bits per device, got {bits}")));
    }
    Ok(())
}

/// Lifted coefficients with the sequence chosen by each active device.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedGroundTruth {
    /// Length `NQ`; block `n` occupies `[nQ, (n+1)Q)`.
    pub gamma_tilde: Vec<f64>,
    /// Per device, the transmitted sequence index (the data) if active.
    pub selected: Vec<Option<usize>>,
    pub q: usize,
}

impl EmbedGroundTruth {
    pub fn n_devices(&self) -> usize {
        self.selected.len()
    }

    /// The lifted vector as an ordinary ground truth on `NQ` coordinates.
    pub fn lifted(&self) -> Result<GroundTruth> {
        GroundTruth::from_gamma(self.gamma_tilde.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum DeviceDecision {
    Inactive,
    Active { bits: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointDecision {
    pub devices: Vec<DeviceDecision>,
    pub q: usize,
}

impl JointDecision {
    /// Lifted 0/1 indicator of the decisions, one nonzero per active block.
    pub fn lifted_support(&self) -> Vec<bool> {
        let mut out = vec![false; self.devices.len() * self.q];
        for (n, d) in self.devices.iter().enumerate() {
            if let DeviceDecision::Active { bits } = *d {
                out[n * self.q + bits] = true;
            }
        }
        out
    }
}

/// Block-concatenated sequence sets, `L x NQ`.
pub fn lift_sequences(kind: SequenceKind, seq_len: usize, n_devices: usize, q: usize, seed: u64) -> Result<SequenceMatrix> {
    if q == 0 {
        return Err(Error::InvalidArgument("Q must be positive".into()));
    }
    let cols = n_devices
        .checked_mul(q)
        .ok_or_else(|| Error::InvalidDimensions(format!("N={n_devices} times Q={q} overflows")))?;
    gen_sequences(kind, seq_len, cols, seed)
}

/// Uniform support of size `K` (drawn exactly as [`gen_ground_truth`]) and
/// uniform data for every active device.
pub fn gen_embed_ground_truth(
    n_devices: usize,
    n_active: usize,
    bits: u32,
    gamma_active: f64,
    seed: u64,
) -> Result<EmbedGroundTruth> {
    check_bits(bits)?;
    let q = 1usize << bits;
    let truth = gen_ground_truth(n_devices, n_active, gamma_active, seed)?;
    let mut data_rng = rng::stream(seed, &[tag::DATA_BITS]);
    let mut selected = vec![None; n_devices];
    let mut gamma_tilde = vec![0.0; n_devices * q];
    for &n in &truth.active {
        let sent = data_rng.random_range(0..q);
        selected[n] = Some(sent);
        gamma_tilde[n * q + sent] = truth.gamma0[n];
    }
    Ok(EmbedGroundTruth { gamma_tilde, selected, q })
}

/// Per block, pick the largest entry (ties to the lowest index) and declare
/// the device active with that index if the entry reaches `l_th`.
pub fn decide_blocks(gamma_hat: &[f64], q: usize, l_th: f64) -> Result<JointDecision> {
    if q == 0 || gamma_hat.len() % q != 0 {
        return Err(Error::InvalidDimensions(format!("length {} is not a multiple of Q={q}", gamma_hat.len())));
    }
    if !(l_th >= 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be nonnegative, got {l_th}")));
    }
    let devices = gamma_hat
        .chunks(q)
        .map(|block| {
            let best = argmax(block);
            if block[best] >= l_th {
                DeviceDecision::Active { bits: best }
            } else {
                DeviceDecision::Inactive
            }
        })
        .collect();
    Ok(JointDecision { devices, q })
}

/// Coordinate descent on the lifted problem followed by [`decide_blocks`].
pub fn detect_joint(
    s_tilde: &SequenceMatrix,
    cov_sample: &CovMatrix,
    noise_var: f64,
    q: usize,
    solver: &SolverConfig,
    l_th: f64,
) -> Result<(JointDecision, Estimate)> {
    if q == 0 || s_tilde.n_columns() % q != 0 {
        return Err(Error::InvalidDimensions(format!("{} columns are not a multiple of Q={q}", s_tilde.n_columns())));
    }
    let est = coordinate_descent_mle(s_tilde, cov_sample, noise_var, solver)?;
    Ok((decide_blocks(&est.gamma_hat, q, l_th)?, est))
}

/// Per-device outcome counts. An active device decoded with the wrong data
/// is a missed detection; an inactive device declared active is a false
/// alarm whatever its decoded data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub n_active: usize,
    pub n_inactive: usize,
    pub missed: usize,
    /// Missed detections caused by wrong data on a device declared active.
    pub wrong_data: usize,
    pub false_alarms: usize,
}

impl ErrorCounts {
    pub fn pmd(&self) -> f64 {
        if self.n_active == 0 {
            0.0
        } else {
            self.missed as f64 / self.n_active as f64
        }
    }

    pub fn pfa(&self) -> f64 {
        if self.n_inactive == 0 {
            0.0
        } else {
            self.false_alarms as f64 / self.n_inactive as f64
        }
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.n_active += other.n_active;
        self.n_inactive += other.n_inactive;
        self.missed += other.missed;
        self.wrong_data += other.wrong_data;
        self.false_alarms += other.false_alarms;
    }
}

pub fn count_errors(decision: &JointDecision, truth: &EmbedGroundTruth) -> Result<ErrorCounts> {
    if decision.devices.len() != truth.n_devices() {
        return Err(Error::DimensionMismatch {
            what: "decision",
            expected: truth.n_devices(),
            found: decision.devices.len(),
        });
    }
    let mut c = ErrorCounts::default();
    for (d, sent) in decision.devices.iter().zip(&truth.selected) {
        match (sent, d) {
            (Some(_), DeviceDecision::Inactive) => {
                c.n_active += 1;
                c.missed += 1;
            }
            (Some(s), DeviceDecision::Active { bits }) => {
                c.n_active += 1;
                if s != bits {
                    c.missed += 1;
                    c.wrong_data += 1;
                }
            }
            (None, DeviceDecision::Active { .. }) => {
                c.n_inactive += 1;
                c.false_alarms += 1;
            }
            (None, DeviceDecision::Inactive) => c.n_inactive += 1,
        }
    }
    Ok(c)
}

/// Identifiability sweep on the lifted `L x NQ` problem. Axes are reported
/// normalized by `N 2^b`; with `bits = 0` the result equals
/// [`crate::phase::phase_sweep`].
pub fn phase_sweep_embed(cfg: &PhaseSweepConfig, bits: u32) -> Result<PhaseGrid> {
    cfg.validate()?;
    check_bits(bits)?;
    let q = 1usize << bits;
    let opts = ConditionOptions::default();
    Ok(run_grid(cfg.n_devices, bits, &cfg.seq_lens, &cfg.actives, cfg.trials, cfg.seed, |l, k, seed| {
        let s = lift_sequences(cfg.kind, l, cfg.n_devices, q, seed)?;
        let truth = gen_embed_ground_truth(cfg.n_devices, k, bits, 1.0, seed)?.lifted()?;
        let verdict = check_condition(&s, &truth.inactive, default_noise_var(l, 1.0), cfg.method, &opts)?;
        Ok(verdict.satisfied)
    }))
}
