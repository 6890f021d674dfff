#![allow(dead_code)]

use std::f64::consts::PI;

use iqpforge::circuit::{AngleRef, Bipartition, BoundGate, Circuit, Gate};
use iqpforge::statevector::StateVector;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

/// Extended-IQP circuit over a random bipartition with a random subset of
/// crossing couplings in each block; every angle is a trainable parameter.
/// `features` qubits (0..k) carry feature-map rotations in the first block.
pub fn random_extended<R: Rng>(n: usize, features: usize, rng: &mut R) -> (Circuit, Bipartition) {
    let mut qubits: Vec<usize> = (0..n).collect();
    qubits.shuffle(rng);
    let na = rng.random_range(1..n.max(2));
    let mut a: Vec<usize> = qubits[..na.min(n)].to_vec();
    let mut b: Vec<usize> = qubits[na.min(n)..].to_vec();
    a.sort();
    b.sort();
    let mut gates = vec![Gate::HadamardLayer];
    let mut next = 0;
    for layer in 0..2 {
        if layer == 0 {
            for q in 0..features {
                gates.push(Gate::Rz { qubit: q, angle: AngleRef::Feature(q as u32 + 1) });
            }
        }
        for q in 0..n {
            gates.push(Gate::Rz { qubit: q, angle: AngleRef::Param(next) });
            next += 1;
        }
        for &p in &a {
            for &q in &b {
                if rng.random::<f64>() < 0.6 {
                    let pair = if rng.random() { (p, q) } else { (q, p) };
                    gates.push(Gate::Rzz { qubits: pair, angle: AngleRef::Param(next) });
                    next += 1;
                }
            }
        }
        gates.push(Gate::HadamardLayer);
    }
    (Circuit::new(n, gates, None).unwrap(), Bipartition { a, b })
}

pub fn random_angles<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
}

pub fn apply_block(s: &mut StateVector, gates: &[BoundGate]) {
    for g in gates {
        s.apply_gate(g);
    }
}

pub fn apply_block_inverse(s: &mut StateVector, gates: &[BoundGate]) {
    for g in gates.iter().rev() {
        s.apply_gate_inverse(g);
    }
}

pub fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
    (a - b).norm() <= tol
}
