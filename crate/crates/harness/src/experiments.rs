//! Experiment pipelines, one per [`ExperimentKind`].

use covdetect::embed::{
    count_errors, decide_blocks, gen_embed_ground_truth, lift_sequences, phase_sweep_embed, ErrorCounts,
};
use covdetect::errordist::{
    error_distribution, histogram, ks_statistic, predicted_scores, std_dev, DetectionScores, ErrorSampleSet, RocCurve,
    RocMode,
};
use covdetect::model::{gen_ground_truth, gen_sequences, sample_covariance, simulate, CovMatrix, GroundTruth, SequenceMatrix};
use covdetect::phase::{empirical_transition, phase_sweep, trial_seed, PhaseGrid, PhaseSweepConfig};
use covdetect::rng::{derive_seed, tag};
use covdetect::solvers::{coordinate_descent_mle, coordinate_descent_regularized, nnls, Estimate, Regularizer};
use covdetect::{par, Complex64};
use sha2::{Digest, Sha256};

use crate::config::{Arm, ConfigError, ExperimentConfig, ExperimentKind};
use crate::output::{Cell, ResultRecord, Table, VERSION};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] covdetect::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn invalid(message: impl Into<String>) -> HarnessError {
    HarnessError::Config(ConfigError { line: None, message: message.into() })
}

/// Run the configured experiment. The returned record carries the resolved
/// configuration and one table per output file.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    cfg.validate().map_err(|(key, message)| invalid(format!("{key}: {message}")))?;
    let experiment = cfg.experiment.ok_or_else(|| invalid("experiment is required"))?;
    let seed = cfg.seed.ok_or_else(|| invalid("seed is required"))?;
    let cfg = cfg.resolved();
    let tables = match experiment {
        ExperimentKind::Phase => phase(&cfg, seed)?,
        ExperimentKind::PhaseEmbed => phase_embed(&cfg, seed)?,
        ExperimentKind::Roc => roc(&cfg, seed)?,
        ExperimentKind::ErrorDist => error_dist(&cfg, seed)?,
        ExperimentKind::CompareNnls => compare(&cfg, seed)?,
        ExperimentKind::Joint => joint(&cfg, seed)?,
    };
    Ok(ResultRecord { experiment, config: cfg, version: VERSION, tables })
}

fn sweep_config(cfg: &ExperimentConfig, seed: u64) -> Result<PhaseSweepConfig> {
    Ok(PhaseSweepConfig {
        n_devices: cfg.n_devices,
        seq_lens: cfg.seq_lens.clone(),
        actives: cfg.actives.clone(),
        trials: cfg.trials,
        method: cfg.method,
        kind: cfg.kind().map_err(invalid)?,
        seed,
    })
}

fn grid_table(name: &str, grid: &PhaseGrid) -> Table {
    let mut t = Table::new(
        name,
        &["L", "K", "L2_over_N", "K_over_N", "success_fraction", "n_trials", "n_inconclusive"],
    );
    for (li, &l) in grid.seq_lens.iter().enumerate() {
        for (ki, &k) in grid.actives.iter().enumerate() {
            t.push(vec![
                l.into(),
                k.into(),
                grid.l2_over_n(li).into(),
                grid.k_over_n(ki).into(),
                grid.success_fraction[li][ki].into(),
                grid.trials.into(),
                grid.inconclusive[li][ki].into(),
            ]);
        }
    }
    t
}

fn phase(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Table>> {
    let sweep = sweep_config(cfg, seed)?;
    let mut tables = vec![grid_table("grid", &phase_sweep(&sweep)?)];
    if cfg.empirical {
        tables.push(grid_table("empirical", &empirical_transition(&sweep, &cfg.solver(0))?));
    }
    Ok(tables)
}

fn phase_embed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Table>> {
    let sweep = sweep_config(cfg, seed)?;
    Ok(vec![grid_table("grid", &phase_sweep_embed(&sweep, cfg.bits)?)])
}

/// Coordinate descent on `sim_trials` independent received signals of one
/// instance, with the configured regularizer.
fn simulated_estimates(
    cfg: &ExperimentConfig,
    s: &SequenceMatrix,
    truth: &GroundTruth,
    noise_var: f64,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let regularizer = cfg.regularizer();
    let runs = par::map_indexed(cfg.sim_trials, |t| -> covdetect::Result<Estimate> {
        let signal = simulate(s, truth, cfg.n_antennas, noise_var, derive_seed(seed, &[tag::TRIAL, t as u64]))?;
        let cov = sample_covariance(&signal)?;
        let solver = cfg.solver(derive_seed(seed, &[tag::SOLVER, t as u64]));
        if regularizer == Regularizer::None {
            coordinate_descent_mle(s, &cov, noise_var, &solver)
        } else {
            coordinate_descent_regularized(s, &cov, noise_var, &solver)
        }
    });
    Ok(runs.into_iter().collect::<covdetect::Result<_>>()?)
}

fn simulated_scores(estimates: &[Estimate], truth: &GroundTruth, mode: RocMode) -> Result<DetectionScores> {
    let mut scores = DetectionScores::new(mode);
    for est in estimates {
        scores.push(&est.gamma_hat, &truth.gamma0)?;
    }
    Ok(scores)
}

fn roc_table(name: &str, curve: &RocCurve) -> Table {
    let mut t = Table::new(name, &["l_th", "pfa", "pmd"]);
    for ((&l, &fa), &md) in curve.thresholds.iter().zip(&curve.pfa).zip(&curve.pmd) {
        t.push(vec![l.into(), fa.into(), md.into()]);
    }
    t
}

fn summary_table(cfg: &ExperimentConfig, rows: &mut [(&str, &mut DetectionScores)]) -> Result<Table> {
    let mut t = Table::new("summary", &["source", "target_pfa", "pmd_at_target_pfa", "equal_error"]);
    for (source, scores) in rows.iter_mut() {
        t.push(vec![
            (*source).into(),
            cfg.target_pfa.into(),
            scores.pmd_at_pfa(cfg.target_pfa)?.into(),
            scores.equal_error()?.into(),
        ]);
    }
    Ok(t)
}

struct Instance {
    s: SequenceMatrix,
    truth: GroundTruth,
    noise_var: f64,
}

fn activity_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let s = gen_sequences(cfg.kind().map_err(invalid)?, cfg.seq_len, cfg.n_devices, seed)?;
    let truth = gen_ground_truth(cfg.n_devices, cfg.n_active, cfg.gamma_active, seed)?;
    Ok(Instance { s, truth, noise_var: cfg.noise_var_for(cfg.seq_len) })
}

fn predicted(cfg: &ExperimentConfig, inst: &Instance, seed: u64) -> Result<ErrorSampleSet> {
    Ok(error_distribution(
        &inst.s,
        &inst.truth,
        inst.noise_var,
        cfg.n_antennas,
        cfg.n_samples,
        derive_seed(seed, &[tag::GAUSSIAN_SAMPLE]),
    )?)
}

fn roc(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Table>> {
    let inst = activity_instance(cfg, seed)?;
    let thresholds = cfg.threshold_grid();
    let errors = predicted(cfg, &inst, seed)?;
    let mut pred = predicted_scores(&errors, &inst.truth, RocMode::ActivityOnly)?;
    let estimates = simulated_estimates(cfg, &inst.s, &inst.truth, inst.noise_var, seed)?;
    let mut sim = simulated_scores(&estimates, &inst.truth, RocMode::ActivityOnly)?;
    Ok(vec![
        roc_table("predicted", &pred.roc(&thresholds)?),
        roc_table("simulated", &sim.roc(&thresholds)?),
        summary_table(cfg, &mut [("predicted", &mut pred), ("simulated", &mut sim)])?,
    ])
}

fn error_dist(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Table>> {
    let inst = activity_instance(cfg, seed)?;
    let errors = predicted(cfg, &inst, seed)?;
    let estimates = simulated_estimates(cfg, &inst.s, &inst.truth, inst.noise_var, seed)?;
    let g0 = &inst.truth.gamma0;
    let sim_class = |set: &[usize]| -> Vec<f64> {
        estimates.iter().flat_map(|e| set.iter().map(|&i| e.gamma_hat[i] - g0[i])).collect()
    };
    let classes = [
        ("predicted", "active", errors.active_values()),
        ("predicted", "inactive", errors.inactive_values()),
        ("simulated", "active", sim_class(&inst.truth.active)),
        ("simulated", "inactive", sim_class(&inst.truth.inactive)),
    ];

    let mut hist = Table::new("histogram", &["source", "class", "bin_lo", "bin_hi", "density"]);
    let mut summary =
        Table::new("summary", &["source", "class", "n_values", "zero_mass", "mean", "std", "condition_satisfied"]);
    for (source, class, values) in &classes {
        if values.is_empty() {
            continue;
        }
        let h = histogram(values)?;
        for (w, &d) in h.edges.windows(2).zip(&h.density) {
            hist.push(vec![(*source).into(), (*class).into(), w[0].into(), w[1].into(), d.into()]);
        }
        let zero = values.iter().filter(|&&v| v == 0.0).count() as f64 / values.len() as f64;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        summary.push(vec![
            (*source).into(),
            (*class).into(),
            values.len().into(),
            zero.into(),
            mean.into(),
            std_dev(values).into(),
            errors.condition_satisfied.to_string().into(),
        ]);
    }
    let mut ks = Table::new("ks", &["class", "ks_statistic"]);
    for (class, a, b) in [("active", &classes[0].2, &classes[2].2), ("inactive", &classes[1].2, &classes[3].2)] {
        if !a.is_empty() && !b.is_empty() {
            ks.push(vec![class.into(), ks_statistic(a, b).into()]);
        }
    }
    Ok(vec![hist, summary, ks])
}

fn joint(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Table>> {
    let q = 1usize << cfg.bits;
    let s = lift_sequences(cfg.kind().map_err(invalid)?, cfg.seq_len, cfg.n_devices, q, seed)?;
    let embed_truth = gen_embed_ground_truth(cfg.n_devices, cfg.n_active, cfg.bits, cfg.gamma_active, seed)?;
    let inst = Instance { s, truth: embed_truth.lifted()?, noise_var: cfg.noise_var_for(cfg.seq_len) };
    let mode = RocMode::JointData { q };
    let thresholds = cfg.threshold_grid();

    let errors = predicted(cfg, &inst, seed)?;
    let mut pred = predicted_scores(&errors, &inst.truth, mode)?;
    let estimates = simulated_estimates(cfg, &inst.s, &inst.truth, inst.noise_var, seed)?;
    let mut sim = simulated_scores(&estimates, &inst.truth, mode)?;

    let l_th = cfg.decision_threshold();
    let mut counts = ErrorCounts::default();
    for est in &estimates {
        counts.add(&count_errors(&decide_blocks(&est.gamma_hat, q, l_th)?, &embed_truth)?);
    }
    let mut count_table =
        Table::new("counts", &["l_th", "n_active", "n_inactive", "missed", "wrong_data", "false_alarms", "pmd", "pfa"]);
    count_table.push(vec![
        l_th.into(),
        counts.n_active.into(),
        counts.n_inactive.into(),
        counts.missed.into(),
        counts.wrong_data.into(),
        counts.false_alarms.into(),
        counts.pmd().into(),
        counts.pfa().into(),
    ]);
    Ok(vec![
        roc_table("predicted", &pred.roc(&thresholds)?),
        roc_table("simulated", &sim.roc(&thresholds)?),
        summary_table(cfg, &mut [("predicted", &mut pred), ("simulated", &mut sim)])?,
        count_table,
    ])
}

/// Hex SHA-256 of a covariance matrix's entries in column-major order.
pub fn covariance_hash(cov: &CovMatrix) -> String {
    let mut h = Sha256::new();
    for z in cov.sigma.iter() {
        let z: &Complex64 = z;
        h.update(z.re.to_le_bytes());
        h.update(z.im.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn arm_name(arm: Arm) -> &'static str {
    match arm {
        Arm::Mle => "mle",
        Arm::Nnls => "nnls",
    }
}

/// Every arm sees the same pilots, activity, data and received signal for
/// each `(L, trial)`; per arm the equal-error probability is reported.
fn compare(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Table>> {
    let kind = cfg.kind().map_err(invalid)?;
    let q = 1usize << cfg.bits;
    let mode = if cfg.bits == 0 { RocMode::ActivityOnly } else { RocMode::JointData { q } };
    let arms = &cfg.arms;
    let trials = cfg.trials;
    let lens = &cfg.seq_lens;

    let outcomes = par::map_indexed(lens.len() * trials, |task| -> Result<Vec<(Vec<f64>, String)>> {
        let (l, t) = (lens[task / trials], task % trials);
        let ts = trial_seed(seed, l, cfg.n_active, t);
        let s = lift_sequences(kind, l, cfg.n_devices, q, ts)?;
        let truth = gen_embed_ground_truth(cfg.n_devices, cfg.n_active, cfg.bits, cfg.gamma_active, ts)?.lifted()?;
        let noise_var = cfg.noise_var_for(l);
        let cov = sample_covariance(&simulate(&s, &truth, cfg.n_antennas, noise_var, ts)?)?;
        let solver = cfg.solver(derive_seed(ts, &[tag::SOLVER]));
        arms.iter()
            .map(|&arm| {
                let hash = covariance_hash(&cov);
                let est = match arm {
                    Arm::Mle => coordinate_descent_mle(&s, &cov, noise_var, &solver)?,
                    Arm::Nnls => nnls(&s, &cov, noise_var, &solver)?,
                };
                Ok((est.gamma_hat, hash))
            })
            .collect()
    });

    let mut err_cols = vec!["L", "L2_over_N"];
    let names: Vec<String> = arms.iter().map(|&a| format!("error_{}", arm_name(a))).collect();
    err_cols.extend(names.iter().map(String::as_str));
    let mut errors = Table::new("error", &err_cols);
    let mut draw_cols = vec!["L", "trial"];
    let hash_names: Vec<String> = arms.iter().map(|&a| format!("hash_{}", arm_name(a))).collect();
    draw_cols.extend(hash_names.iter().map(String::as_str));
    let mut draws = Table::new("draws", &draw_cols);

    let mut outcomes = outcomes.into_iter();
    for &l in lens {
        let mut scores: Vec<DetectionScores> = arms.iter().map(|_| DetectionScores::new(mode)).collect();
        for t in 0..trials {
            let arm_runs = outcomes.next().expect("one outcome per task")?;
            let ts = trial_seed(seed, l, cfg.n_active, t);
            let truth = gen_embed_ground_truth(cfg.n_devices, cfg.n_active, cfg.bits, cfg.gamma_active, ts)?.lifted()?;
            let mut row: Vec<Cell> = vec![l.into(), t.into()];
            for (sc, (gamma_hat, hash)) in scores.iter_mut().zip(arm_runs) {
                sc.push(&gamma_hat, &truth.gamma0)?;
                row.push(hash.into());
            }
            draws.push(row);
        }
        let mut row: Vec<Cell> = vec![l.into(), ((l * l) as f64 / (cfg.n_devices * q) as f64).into()];
        for sc in &mut scores {
            row.push(sc.equal_error()?.into());
        }
        errors.push(row);
    }
    Ok(vec![errors, draws])
}
