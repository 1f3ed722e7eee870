use covdetect::embed::*;
use covdetect::model::*;
use covdetect::phase::{check_condition_covmatch, ConditionOptions};
use covdetect::solvers::{coordinate_descent_mle, threshold, SolverConfig};
use proptest::prelude::*;

#[test]
fn lifted_signal_has_the_lifted_covariance() {
    let (l, n, q, m) = (3, 4, 2, 100_000);
    let s = lift_sequences(SequenceKind::Gaussian, l, n, q, 1).unwrap();
    let truth = gen_embed_ground_truth(n, 2, 1, 1.0, 1).unwrap();
    let lifted = truth.lifted().unwrap();
    let nv = 0.4;
    let hat = sample_covariance(&simulate(&s, &lifted, m, nv, 2).unwrap()).unwrap().sigma;
    let sigma = true_covariance(&s, &truth.gamma_tilde, nv).unwrap().sigma;
    for a in 0..l {
        for b in 0..l {
            let se = (sigma[(a, a)].re * sigma[(b, b)].re / m as f64).sqrt();
            assert!((hat[(a, b)] - sigma[(a, b)]).norm() <= 3.0 * se);
        }
    }
}

#[test]
fn zero_bits_joint_detection_is_plain_detection() {
    let (l, n, k, m) = (8, 40, 4, 32);
    let s = lift_sequences(SequenceKind::Gaussian, l, n, 1, 3).unwrap();
    let truth = gen_embed_ground_truth(n, k, 0, 1.0, 3).unwrap();
    let plain_truth = gen_ground_truth(n, k, 1.0, 3).unwrap();
    assert_eq!(truth.lifted().unwrap(), plain_truth);
    let nv = default_noise_var(l, 1.0);
    let cov = sample_covariance(&simulate(&s, &plain_truth, m, nv, 4).unwrap()).unwrap();
    let cfg = SolverConfig::with_seed(5);
    let (joint, est) = detect_joint(&s, &cov, nv, 1, &cfg, 0.4).unwrap();
    let plain_est = coordinate_descent_mle(&s, &cov, nv, &cfg).unwrap();
    assert_eq!(est, plain_est);
    assert_eq!(joint.lifted_support(), threshold(&plain_est.gamma_hat, 0.4).unwrap().active_flags);
}

#[test]
fn lifted_condition_holds_at_the_joint_operating_point() {
    let (n, l, k) = (1000, 40, 100);
    let opts = ConditionOptions::default();
    let seeds = 5u64;
    let satisfied = (0..seeds)
        .filter(|&seed| {
            let s = lift_sequences(SequenceKind::Gaussian, l, n, 2, seed).unwrap();
            let truth = gen_embed_ground_truth(n, k, 1, 1.0, seed).unwrap().lifted().unwrap();
            check_condition_covmatch(&s, &truth.inactive, &opts).unwrap().satisfied
        })
        .count();
    assert!(satisfied as u64 * 5 >= seeds * 4, "{satisfied}/{seeds}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decisions_and_counts_are_consistent(
        bits in 0u32..3,
        n in 1usize..30,
        seed in any::<u64>(),
        l_th in 0.0f64..1.0,
    ) {
        let q = 1usize << bits;
        let k = (seed as usize) % (n + 1);
        let truth = gen_embed_ground_truth(n, k, bits, 1.0, seed).unwrap();
        let mut r = covdetect::rng::stream(seed, &[1]);
        let gamma_hat: Vec<f64> = (0..n * q).map(|_| covdetect::rng::standard_normal(&mut r).abs() * 0.5).collect();
        let d = decide_blocks(&gamma_hat, q, l_th).unwrap();
        let support = d.lifted_support();
        for block in support.chunks(q) {
            prop_assert!(block.iter().filter(|&&b| b).count() <= 1);
        }
        let c = count_errors(&d, &truth).unwrap();
        // Per-device classification from scratch.
        let (mut missed, mut fa, mut wrong) = (0, 0, 0);
        for dev in 0..n {
            let block = &gamma_hat[dev * q..(dev + 1) * q];
            let best = (0..q).fold(0, |b, i| if block[i] > block[b] { i } else { b });
            let declared = block[best] >= l_th;
            match truth.selected[dev] {
                Some(_) if !declared => missed += 1,
                Some(sent) if sent != best => { missed += 1; wrong += 1 }
                Some(_) => {}
                None if declared => fa += 1,
                None => {}
            }
        }
        prop_assert_eq!((c.missed, c.false_alarms, c.wrong_data), (missed, fa, wrong));
        prop_assert_eq!(c.n_active + c.n_inactive, n);
        prop_assert_eq!(c.n_active, k);
    }
}
