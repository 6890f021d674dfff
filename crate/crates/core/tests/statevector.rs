mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use iqpforge::circuit::*;
use iqpforge::statevector::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

type Mat = [[Complex64; 2]; 2];

fn mul(a: &Mat, b: &Mat) -> Mat {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn h2() -> Mat {
    let s = Complex64::new(1.0 / 2f64.sqrt(), 0.0);
    [[s, s], [s, -s]]
}

fn rz2(t: f64) -> Mat {
    let z = Complex64::new(0.0, 0.0);
    [[Complex64::from_polar(1.0, -t / 2.0), z], [z, Complex64::from_polar(1.0, t / 2.0)]]
}

/// `p(0)` of `H Rz(t2) H Rz(t1) H |0⟩` by 2×2 matrix products.
fn one_qubit_p0(t1: f64, t2: f64) -> f64 {
    let m = [h2(), rz2(t2), h2(), rz2(t1), h2()].iter().fold(
        [[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]],
        |acc, g| mul(&acc, g),
    );
    m[0][0].norm_sqr()
}

fn one_qubit_line() -> Circuit {
    Circuit::new(
        1,
        vec![
            Gate::HadamardLayer,
            Gate::Rz { qubit: 0, angle: AngleRef::Param(0) },
            Gate::HadamardLayer,
            Gate::Rz { qubit: 0, angle: AngleRef::Param(1) },
            Gate::HadamardLayer,
        ],
        None,
    )
    .unwrap()
}

#[test]
fn one_qubit_line_matches_matrix_products() {
    let c = one_qubit_line();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (t1, t2) = (rng.random_range(-PI..PI), rng.random_range(-PI..PI));
        let s = simulate(&bind(&c, &[t1, t2], None).unwrap()).unwrap();
        let exact = one_qubit_p0(t1, t2);
        assert!((s.probability(0) - exact).abs() < 1e-12);
        assert!((exact - (1.0 + t1.sin() * t2.sin()) / 2.0).abs() < 1e-12);
        let g = parameter_shift_grad(&c, &[t1, t2], None, 0).unwrap();
        assert!((g[1] - t1.sin() * t2.cos() / 2.0).abs() < 1e-12);
    }
    let p = dqgm_training_probability(&c, &[FRAC_PI_2, FRAC_PI_2], 0.0).unwrap();
    assert!((p - 1.0).abs() < 1e-12);
    let g = parameter_shift_grad(&c, &[FRAC_PI_2, FRAC_PI_2], None, 0).unwrap();
    assert!(g[1].abs() < 1e-12);
}

#[test]
fn hrzh_closed_form() {
    let c = Circuit::new(
        1,
        vec![Gate::HadamardLayer, Gate::Rz { qubit: 0, angle: AngleRef::Param(0) }, Gate::HadamardLayer],
        None,
    )
    .unwrap();
    for t in [0.0, 0.4, PI, 2.5] {
        let s = simulate(&bind(&c, &[t], None).unwrap()).unwrap();
        assert!((s.probability(0) - (t / 2.0).cos().powi(2)).abs() < 1e-12);
    }
}

#[test]
fn uniform_sampling_is_binomial() {
    let mut s = StateVector::zero(2);
    s.apply_h_layer();
    let counts = sample(&s, 20_000, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(counts.counts.values().sum::<u64>(), 20_000);
    let sigma = (20_000.0f64 * 0.25 * 0.75).sqrt();
    for x in 0..4 {
        let k = *counts.counts.get(&x).unwrap_or(&0) as f64;
        assert!((k - 5000.0).abs() < 5.0 * sigma, "x = {x}: {k}");
    }
    let again = sample(&s, 20_000, &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(counts, again);
}

#[test]
fn product_state_has_vanishing_zz() {
    let mut s = StateVector::zero(2);
    s.apply_h(0);
    assert!(expectation_zz(&s, 0, 1).abs() < 1e-15);
    assert!((expectation_zz(&StateVector::zero(2), 0, 1) - 1.0).abs() < 1e-15);
}

#[test]
fn gamma_sums_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (c, _) = random_extended(5, 0, &mut rng);
    let theta = random_angles(c.param_count(), &mut rng);
    let s = simulate(&bind(&c, &theta, None).unwrap()).unwrap();
    let mut pairs = 0.0;
    for i in 0..5 {
        for j in i + 1..5 {
            pairs += expectation_zz(&s, i, j);
        }
    }
    assert!((expectation_gamma(&s, GammaConvention::UnorderedPairs) - pairs).abs() < 1e-12);
    assert!((expectation_gamma(&s, GammaConvention::OrderedPairs) - 2.0 * pairs).abs() < 1e-12);
}

#[test]
fn zero_angles_give_the_uniform_grid_distribution() {
    let c = build_family(CircuitFamily::ExtendedIqp, 4, &FamilyOptions::default().with_features(4)).unwrap();
    let theta = vec![0.0; c.param_count()];
    assert!((dqgm_training_probability(&c, &theta, 0.0).unwrap() - 1.0 / 16.0).abs() < 1e-12);
    let table = dqgm_sampling_distribution(&c, &theta).unwrap();
    let reg = feature_register(&c).unwrap();
    for x in 0..16u64 {
        let p = dqgm_training_probability(&c, &theta, x as f64).unwrap();
        assert!((table.probs()[sampling_index(&reg, x) as usize] - p).abs() < 1e-9);
    }
}

#[test]
fn duality_at_random_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let n = 2 + trial % 7;
        let k = 1 + trial % n;
        let (c, _) = random_extended(n, k, &mut rng);
        let theta = random_angles(c.param_count(), &mut rng);
        let table = dqgm_sampling_distribution(&c, &theta).unwrap();
        let reg = feature_register(&c).unwrap();
        for x in 0..1u64 << k {
            let p = dqgm_training_probability(&c, &theta, x as f64).unwrap();
            worst = worst.max((table.probs()[sampling_index(&reg, x) as usize] - p).abs());
        }
    }
    assert!(worst < 1e-9, "max gap {worst}");
}

#[test]
fn batched_probabilities_and_gradients_match_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (c, _) = random_extended(5, 3, &mut rng);
    let theta = random_angles(c.param_count(), &mut rng);
    let xs: Vec<f64> = (0..8).map(|x| x as f64 + 0.25).collect();
    let batched = dqgm_training_probabilities(&c, &theta, &xs).unwrap();
    let (p, grad) = dqgm_probabilities_and_grad(&c, &theta, &xs).unwrap();
    for (i, &x) in xs.iter().enumerate() {
        let direct = dqgm_training_probability(&c, &theta, x).unwrap();
        assert!((batched[i] - direct).abs() < 1e-12);
        assert!((p[i] - direct).abs() < 1e-12);
        let shift = parameter_shift_grad(&c, &theta, Some(x), 0).unwrap();
        for j in 0..c.param_count() {
            assert!((grad[i][j] - shift[j]).abs() < 1e-10, "x={x} j={j}");
        }
    }
    let iqp = build_family(CircuitFamily::Iqp, 4, &FamilyOptions::default()).unwrap();
    let theta = random_angles(iqp.param_count(), &mut rng);
    let (table, jac) = distribution_and_grad(&iqp, &theta).unwrap();
    for target in 0..16u64 {
        let shift = parameter_shift_grad(&iqp, &theta, None, target).unwrap();
        for j in 0..iqp.param_count() {
            assert!((jac[target as usize][j] - shift[j]).abs() < 1e-10);
        }
        let s = simulate(&bind(&iqp, &theta, None).unwrap()).unwrap();
        assert!((table[target as usize] - s.probability(target)).abs() < 1e-12);
    }
}

fn random_bound(family: CircuitFamily, n: usize, rng: &mut ChaCha8Rng) -> (Circuit, Vec<f64>) {
    let c = build_family(family, n, &FamilyOptions::default()).unwrap();
    let theta = random_angles(c.param_count(), rng);
    (c, theta)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gates_preserve_normalisation(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let family = if n >= 2 { CircuitFamily::ExtendedIqp } else { CircuitFamily::Product };
        let (c, theta) = random_bound(family, n, &mut rng);
        let bound = bind(&c, &theta, None).unwrap();
        let mut s = StateVector::zero(n);
        for g in &bound.gates {
            s.apply_gate(g);
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
        }
        prop_assert!((s.full_distribution().total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hadamard_layer_is_an_involution(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, theta) = random_bound(CircuitFamily::Iqp, n, &mut rng);
        let s = simulate(&bind(&c, &theta, None).unwrap()).unwrap();
        let mut t = s.clone();
        t.apply_h_layer();
        t.apply_h_layer();
        for (a, b) in s.amplitudes().iter().zip(t.amplitudes()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn diagonal_gates_commute(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, theta) = random_bound(CircuitFamily::Iqp, n, &mut rng);
        let bound = bind(&c, &theta, None).unwrap();
        let mut shuffled = bound.clone();
        let block = c.iqp_block().unwrap();
        rand::seq::SliceRandom::shuffle(&mut shuffled.gates[block], &mut rng);
        let a = simulate(&bound).unwrap();
        let b = simulate(&shuffled).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn parameter_shift_matches_finite_differences(seed in any::<u64>(), n in 1usize..6, use_x in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, k) = if n >= 2 {
            let k = if use_x { 1 + seed as usize % n } else { 0 };
            (random_extended(n, k, &mut rng).0, k)
        } else {
            (one_qubit_line(), 0)
        };
        let theta = random_angles(c.param_count(), &mut rng);
        let x = (k > 0).then(|| rng.random_range(0.0..(1u64 << k) as f64));
        let target = rng.random_range(0..1u64 << n);
        let g = parameter_shift_grad(&c, &theta, x, target).unwrap();
        let h = 1e-5;
        for j in 0..c.param_count() {
            let mut tp = theta.clone();
            tp[j] += h;
            let mut tm = theta.clone();
            tm[j] -= h;
            let fp = simulate(&bind(&c, &tp, x).unwrap()).unwrap().probability(target);
            let fm = simulate(&bind(&c, &tm, x).unwrap()).unwrap().probability(target);
            prop_assert!(((fp - fm) / (2.0 * h) - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn little_endian_bit_order(n in 1usize..8, q in 0usize..8) {
        let q = q % n;
        let mut s = StateVector::zero(n);
        s.apply_h(q);
        s.apply_rz(q, PI);
        s.apply_h(q);
        prop_assert!((s.probability(1 << q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn table_dump_round_trips(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, theta) = random_bound(CircuitFamily::Product, n, &mut rng);
        let table = simulate(&bind(&c, &theta, None).unwrap()).unwrap().full_distribution();
        let back = ProbabilityTable::from_le_bytes(&table.to_le_bytes()).unwrap();
        prop_assert_eq!(back, table);
    }
}
