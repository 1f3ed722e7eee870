//! Flat key-value experiment configuration.

use std::fmt;
use std::str::FromStr;

use covdetect::model::{default_noise_var, SequenceKind};
use covdetect::phase::SweepMethod;
use covdetect::solvers::{Regularizer, SolverConfig};
use serde::{Deserialize, Serialize};

/// Prefix of the configuration lines echoed into every output file.
pub const ECHO_PREFIX: &str = "# config: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Phase,
    PhaseEmbed,
    Roc,
    ErrorDist,
    CompareNnls,
    Joint,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Phase => "phase",
            ExperimentKind::PhaseEmbed => "phase-embed",
            ExperimentKind::Roc => "roc",
            ExperimentKind::ErrorDist => "error-dist",
            ExperimentKind::CompareNnls => "compare-nnls",
            ExperimentKind::Joint => "joint",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Mle,
    Nnls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    L1,
    LogSum,
}

/// Every knob of every experiment. Keys not used by the chosen experiment
/// are ignored but still validated and echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    /// Not echoed: where files land does not change their content.
    #[serde(skip_serializing)]
    pub out: String,
    pub format: OutputFormat,

    pub n_devices: usize,
    pub n_active: usize,
    pub seq_len: usize,
    pub n_antennas: usize,
    pub noise_var: Option<f64>,
    pub gamma_active: f64,
    pub sequences: String,
    pub dft_size: Option<usize>,
    pub bits: u32,

    pub seq_lens: Vec<usize>,
    pub actives: Vec<usize>,
    pub trials: usize,
    pub method: SweepMethod,
    pub empirical: bool,

    pub n_samples: usize,
    pub sim_trials: usize,
    pub thresholds: Vec<f64>,
    pub n_thresholds: usize,
    pub threshold_max: Option<f64>,
    pub target_pfa: f64,
    pub l_th: Option<f64>,

    pub regularizer: RegularizerKind,
    pub lambda: f64,
    pub epsilon: f64,
    pub arms: Vec<Arm>,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: None,
            out: "out".into(),
            format: OutputFormat::Csv,
            n_devices: 1000,
            n_active: 50,
            seq_len: 20,
            n_antennas: 256,
            noise_var: None,
            gamma_active: 1.0,
            sequences: "gaussian".into(),
            dft_size: None,
            bits: 1,
            seq_lens: vec![10, 14, 18, 20, 24, 28],
            actives: vec![10, 25, 50, 75, 100, 150, 200, 300],
            trials: 100,
            method: SweepMethod::Covmatch,
            empirical: false,
            n_samples: 2000,
            sim_trials: 200,
            thresholds: Vec::new(),
            n_thresholds: 201,
            threshold_max: None,
            target_pfa: 0.01,
            l_th: None,
            regularizer: RegularizerKind::None,
            lambda: 0.0,
            epsilon: 0.05,
            arms: vec![Arm::Mle, Arm::Nnls],
            tol: 1e-4,
            max_sweeps: 500,
        }
    }
}

/// A configuration problem, located in the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Parse a configuration document. A file whose lines carry the echo
    /// prefix (an output file) is read from those lines only.
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        let src = extract_echo(src).unwrap_or_else(|| src.to_string());
        let cfg: ExperimentConfig = toml::from_str(&src).map_err(|e| {
            let line = e.span().map(|s| src[..s.start].matches('\n').count() + 1);
            ConfigError { line, message: e.message().to_string() }
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError { line: key_line(&src, key), message })?;
        Ok(cfg)
    }

    pub fn kind(&self) -> Result<SequenceKind, String> {
        let kind = SequenceKind::from_str(&self.sequences).map_err(|e| e.to_string())?;
        Ok(match kind {
            SequenceKind::PartialDft { .. } => SequenceKind::PartialDft { dft_size: self.dft_size },
            other => other,
        })
    }

    pub fn noise_var_for(&self, seq_len: usize) -> f64 {
        self.noise_var.unwrap_or_else(|| default_noise_var(seq_len, self.gamma_active))
    }

    pub fn regularizer(&self) -> Regularizer {
        match self.regularizer {
            RegularizerKind::None => Regularizer::None,
            RegularizerKind::L1 => Regularizer::L1 { lambda: self.lambda },
            RegularizerKind::LogSum => Regularizer::LogSum { lambda: self.lambda, epsilon: self.epsilon },
        }
    }

    pub fn solver(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            max_sweeps: self.max_sweeps,
            tol: self.tol,
            regularizer: self.regularizer(),
            seed,
            n_antennas: self.n_antennas,
            ..SolverConfig::default()
        }
    }

    pub fn threshold_grid(&self) -> Vec<f64> {
        if !self.thresholds.is_empty() {
            return self.thresholds.clone();
        }
        let max = self.threshold_max.unwrap_or(2.0 * self.gamma_active);
        let n = self.n_thresholds;
        (0..n).map(|i| if n == 1 { 0.0 } else { max * i as f64 / (n - 1) as f64 }).collect()
    }

    pub fn decision_threshold(&self) -> f64 {
        self.l_th.unwrap_or(0.5 * self.gamma_active)
    }

    /// The configuration with every default spelled out, as echoed.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        let single_length = matches!(self.experiment, Some(ExperimentKind::Roc | ExperimentKind::ErrorDist | ExperimentKind::Joint));
        if out.noise_var.is_none() && single_length {
            out.noise_var = Some(self.noise_var_for(self.seq_len));
        }
        out
    }

    /// Check every field; on failure return the offending key.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        fn need(ok: bool, key: &'static str, msg: impl Into<String>) -> Result<(), (&'static str, String)> {
            if ok {
                Ok(())
            } else {
                Err((key, msg.into()))
            }
        }
        need(self.n_devices > 0, "n_devices", "n_devices must be positive")?;
        need(self.n_active <= self.n_devices, "n_active", format!("n_active {} exceeds n_devices {}", self.n_active, self.n_devices))?;
        need(self.seq_len > 0, "seq_len", "seq_len must be positive")?;
        need(self.n_antennas > 0, "n_antennas", "n_antennas must be positive")?;
        if let Some(v) = self.noise_var {
            need(v > 0.0 && v.is_finite(), "noise_var", format!("noise_var must be positive, got {v}"))?;
        }
        need(self.gamma_active > 0.0 && self.gamma_active.is_finite(), "gamma_active", "gamma_active must be positive")?;
        self.kind().map_err(|e| ("sequences", e))?;
        need(self.bits <= covdetect::embed::MAX_BITS, "bits", format!("bits must be at most {}", covdetect::embed::MAX_BITS))?;
        need(self.seq_lens.iter().all(|&l| l > 0), "seq_lens", "every entry of seq_lens must be positive")?;
        need(
            self.actives.iter().all(|&k| k <= self.n_devices),
            "actives",
            "every entry of actives must be at most n_devices",
        )?;
        need(self.trials > 0, "trials", "trials must be positive")?;
        need(self.n_samples > 0, "n_samples", "n_samples must be positive")?;
        need(self.sim_trials > 0, "sim_trials", "sim_trials must be positive")?;
        need(self.thresholds.iter().all(|t| *t >= 0.0), "thresholds", "thresholds must be nonnegative")?;
        need(self.thresholds.windows(2).all(|w| w[0] <= w[1]), "thresholds", "thresholds must be sorted ascending")?;
        need(self.n_thresholds > 0, "n_thresholds", "n_thresholds must be positive")?;
        if let Some(m) = self.threshold_max {
            need(m > 0.0 && m.is_finite(), "threshold_max", "threshold_max must be positive")?;
        }
        need((0.0..=1.0).contains(&self.target_pfa), "target_pfa", "target_pfa must lie in [0, 1]")?;
        if let Some(l) = self.l_th {
            need(l >= 0.0, "l_th", "l_th must be nonnegative")?;
        }
        need(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda", "lambda must be nonnegative")?;
        need(self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon", "epsilon must be positive")?;
        need(!self.arms.is_empty(), "arms", "arms must list at least one solver")?;
        need(self.tol > 0.0, "tol", "tol must be positive")?;
        need(self.max_sweeps > 0, "max_sweeps", "max_sweeps must be positive")?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn extract_echo(src: &str) -> Option<String> {
    let lines: Vec<&str> = src.lines().filter_map(|l| l.strip_prefix(ECHO_PREFIX)).collect();
    (!lines.is_empty()).then(|| lines.join("\n") + "\n")
}

fn key_line(src: &str, key: &str) -> Option<usize> {
    src.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}
