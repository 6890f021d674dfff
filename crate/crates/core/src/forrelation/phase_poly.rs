use std::collections::BTreeMap;

use crate::circuit::BoundGate;
use crate::error::{Error, Result};

/// `f(z) = constant + Σ linear_i z_i + Σ quadratic_ij z_i z_j` over
/// `z ∈ {0,1}^n`; a diagonal layer acts on `|z⟩` as `exp(i f(z))`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePolynomial {
    pub n: usize,
    pub constant: f64,
    pub linear: Vec<f64>,
    /// Keyed by normalised `(min, max)` pairs.
    pub quadratic: BTreeMap<(usize, usize), f64>,
}

impl PhasePolynomial {
    pub fn zero(n: usize) -> Self {
        PhasePolynomial { n, constant: 0.0, linear: vec![0.0; n], quadratic: BTreeMap::new() }
    }

    pub fn add_rz(&mut self, q: usize, theta: f64) {
        self.constant -= theta / 2.0;
        self.linear[q] += theta;
    }

    pub fn add_rzz(&mut self, p: usize, q: usize, theta: f64) {
        self.constant -= theta / 2.0;
        self.linear[p] += theta;
        self.linear[q] += theta;
        *self.quadratic.entry((p.min(q), p.max(q))).or_insert(0.0) -= 2.0 * theta;
    }

    pub fn evaluate(&self, z: u64) -> f64 {
        let bit = |q: usize| (z >> q & 1) as f64;
        let lin: f64 = self.linear.iter().enumerate().map(|(q, a)| a * bit(q)).sum();
        let quad: f64 = self.quadratic.iter().map(|(&(p, q), b)| b * bit(p) * bit(q)).sum();
        self.constant + lin + quad
    }

    pub fn negated(&self) -> Self {
        PhasePolynomial {
            n: self.n,
            constant: -self.constant,
            linear: self.linear.iter().map(|a| -a).collect(),
            quadratic: self.quadratic.iter().map(|(&k, b)| (k, -b)).collect(),
        }
    }

    /// Coefficient of `z_p z_q` (zero when absent).
    pub fn coupling(&self, p: usize, q: usize) -> f64 {
        *self.quadratic.get(&(p.min(q), p.max(q))).unwrap_or(&0.0)
    }
}

/// Algebraic normal form of a block of bound diagonal gates.
pub fn phase_polynomial(gates: &[BoundGate], n: usize) -> Result<PhasePolynomial> {
    let mut poly = PhasePolynomial::zero(n);
    for g in gates {
        match *g {
            BoundGate::Rz { qubit, angle } => poly.add_rz(qubit, angle),
            BoundGate::Rzz { qubits: (p, q), angle } => poly.add_rzz(p, q, angle),
            BoundGate::HadamardLayer => {
                return Err(Error::InvalidCircuit("phase polynomials take diagonal gates only".into()))
            }
        }
    }
    Ok(poly)
}
