use std::collections::{BTreeMap, BTreeSet};

use iqpforge::circuit::*;
use iqpforge::statevector::simulate;
use iqpforge::tn::*;
use iqpforge::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bound(family: CircuitFamily, n: usize, seed: u64) -> BoundCircuit {
    let c = build_family(family, n, &FamilyOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..c.param_count()).map(|_| rng.random_range(-3.0..3.0)).collect();
    bind(&c, &theta, None).unwrap()
}

/// Merges tensors strictly in id order: ((t0 t1) t2) ...
fn sequential_plan(net: &TensorNetwork) -> ContractionPlan {
    let k = net.tensors.len();
    let mut merges = vec![];
    let mut acc = 0;
    for (step, id) in (1..k).enumerate() {
        merges.push((acc, id));
        acc = k + step;
    }
    ContractionPlan::from_merges(net, merges).unwrap()
}

/// Index set left after replaying `plan`.
fn final_indices(net: &TensorNetwork, plan: &ContractionPlan) -> BTreeSet<usize> {
    let mut live: BTreeMap<usize, BTreeSet<usize>> =
        net.tensors.iter().map(|t| (t.id, t.indices.iter().copied().collect())).collect();
    let mut next = net.tensors.len();
    for &(a, b) in &plan.merges {
        let (x, y) = (live.remove(&a).unwrap(), live.remove(&b).unwrap());
        live.insert(next, x.symmetric_difference(&y).copied().collect());
        next += 1;
    }
    live.into_values().next().unwrap()
}

fn scalar(t: &Tensor) -> Complex64 {
    assert!(t.indices.is_empty(), "not a scalar: {:?}", t.indices);
    t.data[0]
}

#[test]
fn hadamard_network_contracts_to_product_amplitude() {
    let c = bind(&build_family(CircuitFamily::Hadamard, 3, &FamilyOptions::default()).unwrap(), &[], None).unwrap();
    let net = circuit_to_network(&c, true);
    let v = scalar(&contract(&net, &greedy_plan(&net)).unwrap());
    assert!((v - Complex64::new(2f64.powf(-1.5), 0.0)).norm() < 1e-12, "{v}");
}

#[test]
fn product_network_is_one_chain_per_qubit() {
    let c = random_bound(CircuitFamily::Product, 4, 1);
    for closed in [false, true] {
        let net = circuit_to_network(&c, closed);
        let comps = net.components();
        assert_eq!(comps.len(), 4);
        assert!(comps.iter().all(|ids| ids.len() == if closed { 4 } else { 3 }));
    }
    let plan = greedy_plan(&circuit_to_network(&c, true));
    assert!(plan.max_rank <= 2);
}

#[test]
fn iqp_network_is_connected_with_one_tensor_per_pair() {
    let net = circuit_to_network(&random_bound(CircuitFamily::Iqp, 6, 2), false);
    assert_eq!(net.components().len(), 1);
    assert_eq!(net.tensors.iter().filter(|t| t.rank() == 4).count(), 15);
    assert_eq!(net.open_indices().len(), 6);
    assert_eq!(net.open_indices(), net.outputs.iter().copied().collect());
}

#[test]
fn greedy_contraction_matches_the_statevector_amplitude() {
    for seed in 0..5 {
        let c = random_bound(CircuitFamily::ExtendedIqp, 6, seed);
        let net = circuit_to_network(&c, true);
        let greedy = scalar(&contract(&net, &greedy_plan(&net)).unwrap());
        let seq = scalar(&contract(&net, &sequential_plan(&net)).unwrap());
        let oracle = simulate(&c).unwrap().amplitude(0);
        assert!((greedy - oracle).norm() < 1e-9, "{greedy} vs {oracle}");
        assert!((greedy - seq).norm() < 1e-9);
    }
}

#[test]
fn open_network_reproduces_the_statevector() {
    for family in [CircuitFamily::Iqp, CircuitFamily::ExtendedIqp, CircuitFamily::Product] {
        let c = random_bound(family, 3, 7);
        let net = circuit_to_network(&c, false);
        let t = contract(&net, &greedy_plan(&net)).unwrap();
        // Qubit n-1 most significant, so the flat offset is the little-endian bitstring.
        let order: Vec<usize> = net.outputs.iter().rev().copied().collect();
        let amps = t.permuted(&order).unwrap();
        let s = simulate(&c).unwrap();
        for (x, a) in amps.iter().enumerate() {
            assert!((a - s.amplitude(x as u64)).norm() < 1e-9, "{family} x = {x}");
        }
    }
}

#[test]
fn plans_are_validated() {
    let net = circuit_to_network(&random_bound(CircuitFamily::Product, 2, 0), true);
    assert!(ContractionPlan::from_merges(&net, vec![(0, 0)]).is_err());
    assert!(ContractionPlan::from_merges(&net, vec![(0, 2)]).is_err());
    let k = net.tensors.len();
    assert!(ContractionPlan::from_merges(&net, vec![(0, 2), (0, k)]).is_err());
    assert!(ContractionPlan::from_merges(&net, vec![(0, 2)]).is_err());
    let wide = circuit_to_network(&random_bound(CircuitFamily::Product, 27, 0), false);
    assert!(matches!(contract(&wide, &greedy_plan(&wide)), Err(Error::CapacityExceeded { n: 27, .. })));
}

#[test]
fn chains_saturate_and_all_to_all_grows() {
    let ns: Vec<usize> = (4..=40).collect();
    let rows = complexity_sweep(&CircuitFamily::ALL, &ns).unwrap();
    let of = |f: CircuitFamily| -> Vec<&ComplexityRow> { rows.iter().filter(|r| r.family == f).collect() };
    for f in [CircuitFamily::Product, CircuitFamily::Hadamard] {
        assert!(of(f).iter().all(|r| r.max_rank <= 2), "{f}");
    }
    assert!(of(CircuitFamily::Iqp1dChain).iter().all(|r| r.max_rank <= 4));
    let iqp = of(CircuitFamily::Iqp);
    let ext = of(CircuitFamily::ExtendedIqp);
    for rs in [&iqp, &ext] {
        let even: Vec<usize> = rs.iter().filter(|r| r.n % 2 == 0 && r.n >= 6).map(|r| r.max_rank).collect();
        assert!(even.windows(2).all(|w| w[1] > w[0]), "{even:?}");
        assert!(rs.iter().all(|r| 2 * r.max_rank >= r.n));
        assert!(rs.iter().all(|r| r.est_log2_cost >= r.max_rank));
    }
    assert_eq!(complexity_sweep(&CircuitFamily::ALL, &ns).unwrap(), rows);
}

#[test]
fn extended_iqp_tracks_iqp_within_two() {
    let ns: Vec<usize> = (4..=24).collect();
    let rows = complexity_sweep(&[CircuitFamily::Iqp, CircuitFamily::ExtendedIqp], &ns).unwrap();
    let (iqp, ext) = rows.split_at(ns.len());
    let off: Vec<(usize, usize, usize)> = iqp
        .iter()
        .zip(ext)
        .filter(|(a, b)| a.max_rank.abs_diff(b.max_rank) > 2)
        .map(|(a, b)| (a.n, a.max_rank, b.max_rank))
        .collect();
    assert!(off.is_empty(), "(n, IQP, ExtendedIQP) outside ±2: {off:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn greedy_plans_are_valid_and_exact(family in prop::sample::select(CircuitFamily::ALL.to_vec()), n in 2usize..7, seed in any::<u64>(), closed in any::<bool>()) {
        let c = random_bound(family, n, seed);
        let net = circuit_to_network(&c, closed);
        let plan = greedy_plan(&net);
        prop_assert_eq!(plan.merges.len(), net.tensors.len() - 1);
        prop_assert_eq!(final_indices(&net, &plan), net.open_indices());
        prop_assert!(plan.max_rank >= net.tensors.iter().map(Tensor::rank).max().unwrap());
        prop_assert_eq!(&greedy_plan(&net), &plan);

        let t = contract(&net, &plan).unwrap();
        let s = simulate(&c).unwrap();
        if closed {
            prop_assert!((scalar(&t) - s.amplitude(0)).norm() < 1e-9);
        } else {
            let order: Vec<usize> = net.outputs.iter().rev().copied().collect();
            let other = contract(&net, &sequential_plan(&net)).unwrap().permuted(&order).unwrap();
            for (x, a) in t.permuted(&order).unwrap().iter().enumerate() {
                prop_assert!((a - s.amplitude(x as u64)).norm() < 1e-9);
                prop_assert!((a - other[x]).norm() < 1e-9);
            }
        }
    }
}
