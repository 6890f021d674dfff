mod common;

use std::f64::consts::FRAC_PI_2;

use iqpforge::circuit::*;
use iqpforge::statevector::{dqgm_sampling_distribution, dqgm_training_probabilities, feature_register, simulate};
use iqpforge::trainer::*;
use iqpforge::{rng, Error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn config(steps: usize, grid: GridSpec, target: TargetSpec) -> TrainConfig {
    TrainConfig {
        loss: Loss::Mse,
        backend: Backend::Oracle,
        optimizer: AdamConfig::default(),
        steps,
        seed: 3,
        grid,
        target,
        n_active: None,
        freeze_padding: false,
    }
}

fn gaussian(steps: usize, count: usize) -> TrainConfig {
    let mean = (count - 1) as f64 / 2.0;
    config(steps, GridSpec::integers(count), TargetSpec::Gaussian { mean, std: count as f64 / 8.0 })
}

fn realizable_qcbm_target(c: &Circuit, seed: u64) -> TargetDistribution {
    let theta = random_angles(c.param_count(), &mut ChaCha8Rng::seed_from_u64(seed));
    let s = simulate(&bind(c, &theta, None).unwrap()).unwrap();
    TargetDistribution::bitstrings(c.n(), s.full_distribution().probs().to_vec()).unwrap()
}

fn qcbm_config(steps: usize, n: usize) -> TrainConfig {
    config(steps, GridSpec::integers(1 << n), TargetSpec::Table { probs: vec![0.0; 1 << n] })
}

#[test]
fn gaussian_target_shape() {
    let t = gaussian_target(&GridSpec::integers(64), 31.5, 8.0).unwrap();
    assert!((t.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for k in 0..32 {
        assert!((t.probs[k] - t.probs[63 - k]).abs() < 1e-15);
    }
    let argmax = (0..64).max_by(|&a, &b| t.probs[a].total_cmp(&t.probs[b])).unwrap();
    assert!(argmax == 31 || argmax == 32);
    let flat = gaussian_target(&GridSpec::integers(64), 31.5, 1e6).unwrap();
    let (lo, hi) = flat.probs.iter().fold((1.0f64, 0.0f64), |(l, h), &p| (l.min(p), h.max(p)));
    assert!(hi - lo < 1e-3);
    let half = gaussian_target(&GridSpec { start: 0.0, step: 0.5, count: 128 }, 31.5, 8.0).unwrap();
    assert!((half.probs.iter().sum::<f64>() * 0.5 - 1.0).abs() < 1e-12);
    assert!(matches!(gaussian_target(&GridSpec::integers(0), 0.0, 1.0), Err(Error::Empty(_))));
    assert!(gaussian_target(&GridSpec::integers(4), 0.0, 0.0).is_err());
}

#[test]
fn mse_examples() {
    let t = gaussian_target(&GridSpec::integers(16), 7.5, 3.0).unwrap();
    assert_eq!(mse_loss(&t.probs, &t).unwrap(), 0.0);
    let mut p = t.probs.clone();
    p[4] += 0.01;
    assert!((mse_loss(&p, &t).unwrap() - 1e-4).abs() < 1e-15);
    assert!(matches!(mse_loss(&p[1..], &t), Err(Error::GridMismatch(_))));
}

#[test]
fn mmd_examples() {
    let k = Kernel::default();
    let xs = [1.0, 2.0, 2.0, 5.0, 9.0, 9.0, 9.0, 12.0];
    assert!(mmd_v_statistic(&xs, &xs, &k).unwrap().abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..400).map(|_| rand::Rng::random_range(rng, 0..16) as f64).collect() };
    let (a, b) = (draws(&mut rng), draws(&mut rng));
    assert!(mmd_loss(&a, &b, &k).unwrap().abs() < 0.01);
    assert_eq!(mmd_loss(&a, &xs, &Kernel::Constant).unwrap(), 0.0);
    let narrow = Kernel::GaussianMixture { variances: vec![0.01] };
    let model = vec![0.0; 10];
    let target = vec![100.0; 12];
    let self_term = narrow.eval(0.0, 0.0);
    assert!((mmd_loss(&model, &target, &narrow).unwrap() - 2.0 * self_term).abs() < 1e-12);
    assert!(matches!(mmd_loss(&[], &target, &narrow), Err(Error::Empty(_))));
}

#[test]
fn padded_only_circuit_is_the_identity() {
    for n in [2, 5, 8, 12] {
        let c = build_family(CircuitFamily::ExtendedIqp, n, &FamilyOptions::default()).unwrap();
        let theta = identity_padding_init(&c, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let s = simulate(&bind(&c, &theta, None).unwrap()).unwrap();
        assert!((s.probability(0) - 1.0).abs() < 1e-9, "n = {n}");
    }
}

#[test]
fn thirty_qubit_padding_angles() {
    let c = build_family(CircuitFamily::ExtendedIqp, 30, &FamilyOptions::default().with_features(6)).unwrap();
    let theta = identity_padding_init(&c, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for g in c.gates() {
        match *g {
            Gate::Rz { qubit, angle: AngleRef::Param(j) } if qubit >= 6 => assert_eq!(theta[j], FRAC_PI_2),
            Gate::Rzz { qubits: (p, q), angle: AngleRef::Param(j) } if p.max(q) >= 6 => assert_eq!(theta[j], 0.0),
            Gate::Rz { angle: AngleRef::Param(j), .. } | Gate::Rzz { angle: AngleRef::Param(j), .. } => {
                assert!(theta[j].abs() <= 0.1)
            }
            _ => {}
        }
    }
    assert!(identity_padding_init(&c, 31, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

/// Index of each gate in the first `n_small` qubits' subcircuit, keyed by
/// (diagonal block, gate).
fn block_gates(c: &Circuit) -> Vec<(usize, Gate)> {
    let mut block = 0;
    c.gates()
        .iter()
        .filter_map(|g| {
            if *g == Gate::HadamardLayer {
                block += 1;
                None
            } else {
                Some((block, g.clone()))
            }
        })
        .collect()
}

#[test]
fn padding_leaves_the_active_model_unchanged() {
    let (n_total, n_active) = (10, 4);
    let opts = FamilyOptions::default().with_features(n_active);
    let big = build_family(CircuitFamily::ExtendedIqp, n_total, &opts).unwrap();
    let small = build_family(CircuitFamily::ExtendedIqp, n_active, &opts).unwrap();
    let theta = identity_padding_init(&big, n_active, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    // Carry the active angles over to the small circuit gate by gate.
    let big_gates = block_gates(&big);
    let mut small_theta = vec![f64::NAN; small.param_count()];
    for (blk, g) in block_gates(&small) {
        if let Some(AngleRef::Param(j)) = g.angle() {
            let (_, bg) = big_gates
                .iter()
                .find(|(b, h)| {
                    *b == blk
                        && matches!(h.angle(), Some(AngleRef::Param(_)))
                        && std::mem::discriminant(h) == std::mem::discriminant(&g)
                        && qubits(h) == qubits(&g)
                })
                .unwrap();
            let Some(AngleRef::Param(k)) = bg.angle() else { unreachable!() };
            small_theta[j] = theta[k];
        }
    }
    let xs: Vec<f64> = (0..16).map(|x| x as f64).collect();
    let p_big = dqgm_training_probabilities(&big, &theta, &xs).unwrap();
    let p_small = dqgm_training_probabilities(&small, &small_theta, &xs).unwrap();
    for (a, b) in p_big.iter().zip(&p_small) {
        assert!((a - b).abs() < 1e-12);
    }
    let marginal = dqgm_sampling_distribution(&big, &theta).unwrap();
    let reference = dqgm_sampling_distribution(&small, &small_theta).unwrap();
    for x in 0..1usize << n_active {
        let folded: f64 = (0..1usize << (n_total - n_active)).map(|hi| marginal.probs()[x | hi << n_active]).sum();
        assert!((folded - reference.probs()[x]).abs() < 1e-12);
    }
}

fn qubits(g: &Gate) -> (usize, usize) {
    match *g {
        Gate::Rz { qubit, .. } => (qubit, qubit),
        Gate::Rzz { qubits, .. } => qubits,
        Gate::HadamardLayer => (usize::MAX, usize::MAX),
    }
}

#[test]
fn padded_mass_stays_small_while_training() {
    let (n_total, n_active) = (10, 4);
    let c = build_family(CircuitFamily::ExtendedIqp, n_total, &FamilyOptions::default().with_features(n_active)).unwrap();
    let mut cfg = gaussian(20, 16);
    cfg.n_active = Some(n_active);
    cfg.freeze_padding = true;
    let reg = feature_register(&c).unwrap();
    let mut worst: f64 = 0.0;
    let mut t = Trainer::dqgm(&c, &cfg).unwrap();
    let mut check = |theta: &[f64]| {
        let table = dqgm_sampling_distribution(&c, theta).unwrap();
        let active_mask: usize = reg.iter().map(|q| 1 << q).sum();
        let padded: f64 = table.probs().iter().enumerate().filter(|(x, _)| x & !active_mask != 0).map(|(_, p)| p).sum();
        worst = worst.max(padded);
    };
    check(t.theta());
    t.run(|_, ck| {
        check(&ck.theta);
        Ok(())
    })
    .unwrap();
    assert!(worst < 0.05, "padded mass reached {worst}");
}

#[test]
fn frozen_padding_is_not_updated() {
    let c = build_family(CircuitFamily::ExtendedIqp, 8, &FamilyOptions::default().with_features(4)).unwrap();
    let mut cfg = gaussian(5, 16);
    cfg.n_active = Some(4);
    cfg.freeze_padding = true;
    let t = Trainer::dqgm(&c, &cfg).unwrap();
    let before = t.theta().to_vec();
    let after = train_dqgm(&cfg, &c).unwrap().theta;
    let trainable = trainable_params(&c, &cfg);
    for j in 0..before.len() {
        if trainable.contains(&j) {
            assert_ne!(before[j], after[j], "parameter {j} never moved");
        } else {
            assert_eq!(before[j], after[j], "frozen parameter {j} moved");
        }
    }
}

#[test]
fn zero_steps_records_only_the_initial_loss() {
    let c = build_family(CircuitFamily::ExtendedIqp, 4, &FamilyOptions::default().with_features(4)).unwrap();
    let cfg = gaussian(0, 16);
    let ck = train_dqgm(&cfg, &c).unwrap();
    assert_eq!(ck.step, 0);
    assert_eq!(ck.loss_history.len(), 1);
    let init = identity_padding_init(&c, 4, &mut rng::stream(cfg.seed, "init")).unwrap();
    assert_eq!(ck.theta, init);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let c = build_family(CircuitFamily::ExtendedIqp, 4, &FamilyOptions::default().with_features(3)).unwrap();
    for backend in [Backend::Oracle, Backend::Forrelation { samples: 2000 }] {
        let mut cfg = gaussian(6, 8);
        cfg.backend = backend;
        let a = train_dqgm(&cfg, &c).unwrap();
        let b = train_dqgm(&cfg, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_history.len(), a.step + 1);

        let mut half = cfg.clone();
        half.steps = 3;
        let partial = train_dqgm(&half, &c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let mut ck = partial.clone();
        // Resuming under the longer schedule keeps the same streams.
        ck.config = cfg.clone();
        ck.config_digest = cfg.digest();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
        let mut t = Trainer::resume(loaded).unwrap();
        t.run(|_, _| Ok(())).unwrap();
        let resumed = t.into_checkpoint();
        assert_eq!(resumed.loss_history, a.loss_history);
        assert_eq!(resumed.theta, a.theta);
    }
}

#[test]
fn checkpoint_json_stores_exact_decimal_angles() {
    let c = build_family(CircuitFamily::ExtendedIqp, 3, &FamilyOptions::default()).unwrap();
    let target = realizable_qcbm_target(&c, 1);
    let ck = train_qcbm(&qcbm_config(2, 3), &c, &target).unwrap();
    let json: serde_json::Value = serde_json::to_value(&ck).unwrap();
    assert!(json["theta"].as_array().unwrap().iter().all(|v| v.is_string()));
    let back: Checkpoint = serde_json::from_value(json).unwrap();
    assert_eq!(back.theta.len(), c.param_count());
    assert_eq!(back, ck);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let c = build_family(CircuitFamily::ExtendedIqp, 3, &FamilyOptions::default()).unwrap();
    let target = realizable_qcbm_target(&c, 1);
    let ck = train_qcbm(&qcbm_config(2, 3), &c, &target).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let mut bad = ck.clone();
    bad.loss_history.pop();
    bad.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
    let mut bad = ck;
    bad.config.seed += 1;
    bad.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn divergence_guard_aborts() {
    let c = build_family(CircuitFamily::ExtendedIqp, 3, &FamilyOptions::default()).unwrap();
    let mut cfg = qcbm_config(5, 3);
    cfg.optimizer.lr = 2.0;
    // A target one part in 10^7 away from the initial model.
    let init = identity_padding_init(&c, 3, &mut rng::stream(cfg.seed, "init")).unwrap();
    let mut probs = simulate(&bind(&c, &init, None).unwrap()).unwrap().full_distribution().probs().to_vec();
    probs[0] -= 1e-7;
    probs[1] += 1e-7;
    let target = TargetDistribution::bitstrings(3, probs).unwrap();
    match train_qcbm(&cfg, &c, &target) {
        Err(Error::Divergence { step, loss, initial }) => {
            assert_eq!(step, 1);
            assert!(loss > 1e3 * initial);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn gradient_vanishes_at_a_realizable_minimum() {
    let c = build_family(CircuitFamily::ExtendedIqp, 4, &FamilyOptions::default()).unwrap();
    let theta = random_angles(c.param_count(), &mut ChaCha8Rng::seed_from_u64(4));
    let s = simulate(&bind(&c, &theta, None).unwrap()).unwrap();
    let target = TargetDistribution::bitstrings(4, s.full_distribution().probs().to_vec()).unwrap();
    let all: Vec<usize> = (0..c.param_count()).collect();
    for loss in [Loss::Mse, Loss::Mmd { kernel: Kernel::default() }] {
        let e = loss_gradient(Task::Qcbm, &c, &theta, &target, &loss, Backend::Oracle, &all, 0).unwrap();
        assert_eq!(e.grad.len(), c.param_count());
        assert!(e.loss < 1e-24);
        assert!(e.grad.iter().all(|g| g.abs() < 1e-12));
    }
}

#[test]
fn backends_agree_on_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (c, _) = random_extended(8, 3, &mut rng);
    let theta = random_angles(c.param_count(), &mut rng);
    let target = gaussian_target(&GridSpec::integers(8), 3.5, 2.0).unwrap();
    let all: Vec<usize> = (0..c.param_count()).collect();
    for loss in [Loss::Mse, Loss::Mmd { kernel: Kernel::default() }] {
        let exact = loss_gradient(Task::Dqgm, &c, &theta, &target, &loss, Backend::Oracle, &all, 0).unwrap();
        let mc = loss_gradient(Task::Dqgm, &c, &theta, &target, &loss, Backend::Forrelation { samples: 100_000 }, &all, 9)
            .unwrap();
        let se = mc.grad_stderr.as_ref().unwrap();
        let outside = (0..all.len()).filter(|&j| (mc.grad[j] - exact.grad[j]).abs() > 5.0 * se[j] + 1e-12).count();
        assert!(outside * 100 <= all.len(), "{loss:?}: {outside}/{} outside 5 sigma", all.len());
        let p_se = mc.prob_stderr.as_ref().unwrap();
        for i in 0..target.len() {
            assert!((mc.probs[i] - exact.probs[i]).abs() < 5.0 * p_se[i] + 1e-9);
        }
    }
}

#[test]
fn gradient_descent_finds_the_one_parameter_minimiser() {
    let c = Circuit::new(
        1,
        vec![Gate::HadamardLayer, Gate::Rz { qubit: 0, angle: AngleRef::Param(0) }, Gate::HadamardLayer],
        None,
    )
    .unwrap();
    let star: f64 = 1.1;
    let t = (star / 2.0).cos().powi(2);
    let target = TargetDistribution::bitstrings(1, vec![t, 1.0 - t]).unwrap();
    let mut cfg = qcbm_config(600, 1);
    cfg.optimizer.lr_decay = 0.995;
    let ck = train_qcbm(&cfg, &c, &target).unwrap();
    assert!((ck.theta[0].abs() - star).abs() < 1e-4, "{}", ck.theta[0]);
}

#[test]
fn qcbm_training_on_a_realizable_target() {
    let c = build_family(CircuitFamily::ExtendedIqp, 4, &FamilyOptions::default()).unwrap();
    let target = realizable_qcbm_target(&c, 21);
    let oracle = train_qcbm(&qcbm_config(200, 4), &c, &target).unwrap();
    let first = oracle.loss_history[0];
    let last = *oracle.loss_history.last().unwrap();
    assert!(last < first / 10.0, "{first} -> {last}");
    // Decreasing on average: each quarter of the run ends below the last.
    let quarters: Vec<f64> = (1..=4).map(|k| oracle.loss_history[50 * k]).collect();
    assert!(quarters.windows(2).all(|w| w[1] < w[0]), "{quarters:?}");

    let mut cfg = qcbm_config(200, 4);
    cfg.backend = Backend::Forrelation { samples: 20_000 };
    let mc = train_qcbm(&cfg, &c, &target).unwrap();
    let mc_final = oracle_loss(&mc, &mc.theta).unwrap();
    assert!(mc_final <= 2.0 * last, "forrelation {mc_final} vs oracle {last}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mse_is_non_negative_and_zero_only_on_equality(
        probs in prop::collection::vec(0.0f64..0.05, 1..20),
        noise in prop::collection::vec(-0.05f64..0.05, 20),
    ) {
        let t = TargetDistribution::new((0..probs.len()).map(|x| x as f64).collect(), 1.0, probs.clone()).unwrap();
        let model: Vec<f64> = probs.iter().zip(&noise).map(|(p, e)| p + e).collect();
        let l = mse_loss(&model, &t).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, model == probs);
    }

    #[test]
    fn constant_kernel_cancels(a in prop::collection::vec(-10.0f64..10.0, 2..30), b in prop::collection::vec(-10.0f64..10.0, 2..30)) {
        prop_assert!(mmd_loss(&a, &b, &Kernel::Constant).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mmd_table_loss_is_non_negative(
        p in prop::collection::vec(0.0f64..0.1, 8),
        q in prop::collection::vec(0.0f64..0.1, 8),
    ) {
        let t = TargetDistribution::new((0..8).map(|x| x as f64).collect(), 1.0, q).unwrap();
        prop_assert!(mmd_table_loss(&p, &t, &Kernel::default()).unwrap() >= -1e-15);
    }
}

#[test]
fn freezing_is_the_default_for_padded_runs() {
    let json = r#"{"steps": 1, "grid": {"start": 0, "step": 1, "count": 4},
                   "target": {"kind": "gaussian", "mean": 1.5, "std": 1}, "n_active": 2}"#;
    let cfg: TrainConfig = serde_json::from_str(json).unwrap();
    assert!(cfg.freeze_padding);
    assert_eq!(cfg.optimizer, AdamConfig::default());
    assert_eq!(cfg.backend, Backend::Oracle);
}
