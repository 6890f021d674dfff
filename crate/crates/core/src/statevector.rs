//! Dense statevector simulator: the exact reference for every estimator and
//! the small-n sampling backend.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{bind, AngleRef, BoundCircuit, BoundGate, Circuit, Gate};
use crate::error::{Error, Result};

pub const DEFAULT_QUBIT_CAP: usize = 24;

/// Below this many amplitudes the kernels stay serial.
const PAR_LEN: usize = 1 << 14;

/// Sum convention for the two-body observable `Γ = Σ ⟨Z_i Z_j⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaConvention {
    /// `Σ_{i<j}`
    UnorderedPairs,
    /// `Σ_{i≠j}`, i.e. twice the unordered sum.
    OrderedPairs,
}

impl GammaConvention {
    pub fn pair_weight(self) -> f64 {
        match self {
            GammaConvention::UnorderedPairs => 1.0,
            GammaConvention::OrderedPairs => 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        Err(Error::CapacityExceeded { n, cap })
    } else {
        Ok(())
    }
}

impl StateVector {
    /// `|0…0⟩`
    pub fn zero(n: usize) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        StateVector { n, amps }
    }

    pub fn from_amplitudes(n: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return Err(Error::InvalidArgument(format!(
                "{} amplitudes for {n} qubits",
                amps.len()
            )));
        }
        Ok(StateVector { n, amps })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, x: u64) -> Complex64 {
        self.amps[x as usize]
    }

    pub fn probability(&self, x: u64) -> f64 {
        self.amps[x as usize].norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn full_distribution(&self) -> ProbabilityTable {
        let probs = self.amps.iter().map(|a| a.norm_sqr()).collect();
        ProbabilityTable { n: self.n, probs }
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn apply_h(&mut self, q: usize) {
        let stride = 1usize << q;
        let butterfly = |chunk: &mut [Complex64]| {
            let (lo, hi) = chunk.split_at_mut(stride);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = (x + y) * FRAC_1_SQRT_2;
                *b = (x - y) * FRAC_1_SQRT_2;
            }
        };
        if self.amps.len() >= PAR_LEN && self.amps.len() / (2 * stride) >= 4 {
            self.amps.par_chunks_mut(2 * stride).for_each(butterfly);
        } else {
            self.amps.chunks_mut(2 * stride).for_each(butterfly);
        }
    }

    pub fn apply_h_layer(&mut self) {
        for q in 0..self.n {
            self.apply_h(q);
        }
    }

    fn apply_diagonal(&mut self, phase: impl Fn(usize) -> Complex64 + Sync) {
        if self.amps.len() >= PAR_LEN {
            self.amps.par_iter_mut().enumerate().for_each(|(z, a)| *a *= phase(z));
        } else {
            self.amps.iter_mut().enumerate().for_each(|(z, a)| *a *= phase(z));
        }
    }

    pub fn apply_rz(&mut self, q: usize, theta: f64) {
        let p0 = Complex64::from_polar(1.0, -theta / 2.0);
        let p1 = p0.conj();
        self.apply_diagonal(|z| if z >> q & 1 == 0 { p0 } else { p1 });
    }

    pub fn apply_rzz(&mut self, p: usize, q: usize, theta: f64) {
        let even = Complex64::from_polar(1.0, -theta / 2.0);
        let odd = even.conj();
        self.apply_diagonal(|z| if (z >> p ^ z >> q) & 1 == 0 { even } else { odd });
    }

    /// Controlled phase `e^{iφ}` on `|11⟩` of qubits `(a, b)`.
    pub fn apply_cphase(&mut self, a: usize, b: usize, phi: f64) {
        let w = Complex64::from_polar(1.0, phi);
        let one = Complex64::new(1.0, 0.0);
        self.apply_diagonal(|z| if z >> a & 1 == 1 && z >> b & 1 == 1 { w } else { one });
    }

    pub fn apply_gate(&mut self, g: &BoundGate) {
        match *g {
            BoundGate::HadamardLayer => self.apply_h_layer(),
            BoundGate::Rz { qubit, angle } => self.apply_rz(qubit, angle),
            BoundGate::Rzz { qubits: (p, q), angle } => self.apply_rzz(p, q, angle),
        }
    }

    pub fn apply_gate_inverse(&mut self, g: &BoundGate) {
        match *g {
            BoundGate::HadamardLayer => self.apply_h_layer(),
            BoundGate::Rz { qubit, angle } => self.apply_rz(qubit, -angle),
            BoundGate::Rzz { qubits: (p, q), angle } => self.apply_rzz(p, q, -angle),
        }
    }

    /// Applies the product state contraction `Σ_z Π_q conj(c_q(z_q)) ψ(z)`
    /// with `c_q = (1, e^{iφ_q})/√2`.
    fn product_overlap(&self, phases: &[f64], buf: &mut Vec<Complex64>) -> Complex64 {
        buf.clear();
        buf.extend_from_slice(&self.amps);
        let mut len = buf.len();
        for q in (0..self.n).rev() {
            let half = len / 2;
            let w1 = Complex64::from_polar(FRAC_1_SQRT_2, -phases[q]);
            for k in 0..half {
                buf[k] = buf[k] * FRAC_1_SQRT_2 + buf[k + half] * w1;
            }
            len = half;
        }
        buf[0]
    }
}

pub fn simulate(c: &BoundCircuit) -> Result<StateVector> {
    simulate_with_cap(c, DEFAULT_QUBIT_CAP)
}

pub fn simulate_with_cap(c: &BoundCircuit, cap: usize) -> Result<StateVector> {
    check_cap(c.n, cap)?;
    let mut s = StateVector::zero(c.n);
    for g in &c.gates {
        s.apply_gate(g);
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityTable {
    n: usize,
    probs: Vec<f64>,
}

impl ProbabilityTable {
    /// Checks length, non-negativity and normalisation (1e-9).
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self> {
        let t = Self::unnormalized(n, probs)?;
        let total = t.total();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
        }
        Ok(t)
    }

    /// Skips the normalisation check; used for synthetic tables.
    pub fn unnormalized(n: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 1 << n {
            return Err(Error::InvalidArgument(format!("{} probabilities for {n} qubits", probs.len())));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid probability {p}")));
        }
        Ok(ProbabilityTable { n, probs })
    }

    pub fn uniform(n: usize) -> Self {
        let len = 1usize << n;
        ProbabilityTable { n, probs: vec![1.0 / len as f64; len] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `n` as little-endian u64 followed by `2^n` little-endian f64 values.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (self.probs.len() + 1));
        out.extend_from_slice(&(self.n as u64).to_le_bytes());
        for p in &self.probs {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::InvalidArgument("malformed probability-table dump".into());
        let n = u64::from_le_bytes(bytes.get(..8).ok_or_else(bad)?.try_into().unwrap()) as usize;
        if n > 40 || bytes.len() != 8 * ((1usize << n) + 1) {
            return Err(bad());
        }
        let probs = bytes[8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::unnormalized(n, probs)
    }

    /// Draws `shots` i.i.d. outcomes by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, shots: u64, rng: &mut R) -> SampleCounts {
        let mut cdf = Vec::with_capacity(self.probs.len());
        let mut acc = 0.0;
        for p in &self.probs {
            acc += p;
            cdf.push(acc);
        }
        let mut counts = BTreeMap::new();
        for _ in 0..shots {
            let u = rng.random::<f64>() * acc;
            let mut x = cdf.partition_point(|&c| c <= u);
            // Never land on a zero-probability tail entry through rounding.
            while x > 0 && (x >= self.probs.len() || self.probs[x] == 0.0) {
                x -= 1;
            }
            *counts.entry(x as u64).or_insert(0) += 1;
        }
        SampleCounts { n: self.n, counts, shots }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleCounts {
    pub n: usize,
    pub counts: BTreeMap<u64, u64>,
    pub shots: u64,
}

impl SampleCounts {
    pub fn frequency(&self, x: u64) -> f64 {
        if self.shots == 0 {
            return 0.0;
        }
        *self.counts.get(&x).unwrap_or(&0) as f64 / self.shots as f64
    }

    /// Total-variation distance between the empirical and a model table.
    pub fn tv_distance(&self, model: &ProbabilityTable) -> f64 {
        let mut tv = 0.0;
        for (x, p) in model.probs().iter().enumerate() {
            tv += (self.frequency(x as u64) - p).abs();
        }
        tv / 2.0
    }
}

pub fn sample<R: Rng + ?Sized>(s: &StateVector, shots: u64, rng: &mut R) -> SampleCounts {
    s.full_distribution().sample(shots, rng)
}

pub fn expectation_zz(s: &StateVector, i: usize, j: usize) -> f64 {
    assert_ne!(i, j, "⟨Z_i Z_j⟩ needs distinct qubits");
    s.amps
        .iter()
        .enumerate()
        .map(|(x, a)| if (x >> i ^ x >> j) & 1 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
        .sum()
}

pub fn expectation_gamma(s: &StateVector, convention: GammaConvention) -> f64 {
    let mut total = 0.0;
    for i in 0..s.n {
        for j in i + 1..s.n {
            total += expectation_zz(s, i, j);
        }
    }
    total * convention.pair_weight()
}

/// `|⟨0…0| C(θ, x) |0…0⟩|²` by direct simulation.
pub fn dqgm_training_probability(c: &Circuit, theta: &[f64], x: f64) -> Result<f64> {
    let s = simulate(&bind(c, theta, Some(x))?)?;
    Ok(s.probability(0))
}

/// Qubits of the feature register, ordered by exponent `1..=k`.
pub fn feature_register(c: &Circuit) -> Result<Vec<usize>> {
    let mut slots = c.feature_slots();
    slots.sort_by_key(|&(_, e)| e);
    for (k, &(q, e)) in slots.iter().enumerate() {
        if e as usize != k + 1 || slots[..k].iter().any(|&(p, _)| p == q) {
            return Err(Error::InvalidCircuit(
                "feature exponents must be 1..=k on distinct qubits".into(),
            ));
        }
    }
    Ok(slots.into_iter().map(|(q, _)| q).collect())
}

/// Basis index of grid point `x` in the sampling circuit's output: bit `k`
/// of `x` sits on the qubit carrying exponent `k+1`, other qubits are 0.
pub fn sampling_index(register: &[usize], x: u64) -> u64 {
    register
        .iter()
        .enumerate()
        .map(|(k, &q)| (x >> k & 1) << q)
        .sum()
}

/// The trainable body `V = H U2 H U1θ` (leading H and feature rotations
/// removed) and the per-qubit feature exponents.
fn dqgm_body(c: &Circuit, theta: &[f64]) -> Result<BoundCircuit> {
    let gates = c.gates();
    if gates.first() != Some(&Gate::HadamardLayer) {
        return Err(Error::InvalidCircuit("DQGM circuits start with an H layer".into()));
    }
    let first_block_end = gates[1..]
        .iter()
        .position(|g| !g.is_diagonal())
        .map_or(gates.len(), |p| p + 1);
    let mut body = bind(c, theta, Some(0.0))?;
    let mut keep = Vec::with_capacity(gates.len());
    for (k, g) in gates.iter().enumerate() {
        let is_feature = matches!(g.angle(), Some(AngleRef::Feature(_)));
        if is_feature && k >= first_block_end {
            return Err(Error::InvalidCircuit(
                "feature rotations must sit in the first diagonal block".into(),
            ));
        }
        keep.push(k > 0 && !is_feature);
    }
    let mut it = keep.into_iter();
    body.gates.retain(|_| it.next().unwrap());
    Ok(body)
}

/// `ψ = V†|0⟩`; the training probability at `x` is `|⟨χ_x|ψ⟩|²` with
/// `χ_x` the feature-map product state.
pub fn dqgm_latent_state(c: &Circuit, theta: &[f64]) -> Result<StateVector> {
    check_cap(c.n(), DEFAULT_QUBIT_CAP)?;
    let body = dqgm_body(c, theta)?;
    let mut s = StateVector::zero(c.n());
    for g in body.gates.iter().rev() {
        s.apply_gate_inverse(g);
    }
    Ok(s)
}

fn feature_phases(c: &Circuit, x: f64) -> Vec<f64> {
    let mut phases = vec![0.0; c.n()];
    for (q, e) in c.feature_slots() {
        phases[q] += crate::circuit::feature_angle(e, x);
    }
    phases
}

/// Training probabilities at every `x` from one latent state.
pub fn dqgm_training_probabilities(c: &Circuit, theta: &[f64], xs: &[f64]) -> Result<Vec<f64>> {
    let psi = dqgm_latent_state(c, theta)?;
    Ok(latent_probabilities(c, &psi, xs))
}

fn latent_probabilities(c: &Circuit, psi: &StateVector, xs: &[f64]) -> Vec<f64> {
    let mut buf = Vec::new();
    xs.iter()
        .map(|&x| psi.product_overlap(&feature_phases(c, x), &mut buf).norm_sqr())
        .collect()
}

/// Applies the inverse of `F`, where `F|x⟩ = ⊗_k (|0⟩ + e^{2πix/2^{k+1}}|1⟩)/√2`
/// on register qubit `k` (the QFT without its final swaps).
pub fn apply_inverse_feature_transform(s: &mut StateVector, register: &[usize]) {
    for (k, &q) in register.iter().enumerate() {
        for (j, &p) in register[..k].iter().enumerate().rev() {
            s.apply_cphase(p, q, -2.0 * PI / 2f64.powi((k - j + 1) as i32));
        }
        s.apply_h(q);
    }
}

/// Output distribution of the sampling circuit: `ψ = V†|0⟩` followed by the
/// inverse QFT on the feature register and H on every other qubit.
pub fn dqgm_sampling_distribution(c: &Circuit, theta: &[f64]) -> Result<ProbabilityTable> {
    let register = feature_register(c)?;
    let mut s = dqgm_latent_state(c, theta)?;
    apply_inverse_feature_transform(&mut s, &register);
    for q in (0..c.n()).filter(|q| !register.contains(q)) {
        s.apply_h(q);
    }
    Ok(s.full_distribution())
}

/// Gate positions whose angle is trainable, with the parameter index.
fn param_occurrences(c: &Circuit) -> Vec<(usize, usize)> {
    c.gates()
        .iter()
        .enumerate()
        .filter_map(|(k, g)| match g.angle() {
            Some(AngleRef::Param(j)) => Some((k, j)),
            _ => None,
        })
        .collect()
}

fn shift(b: &mut BoundCircuit, k: usize, delta: f64) {
    match &mut b.gates[k] {
        BoundGate::Rz { angle, .. } | BoundGate::Rzz { angle, .. } => *angle += delta,
        BoundGate::HadamardLayer => unreachable!("H layers carry no parameter"),
    }
}

/// `∂p(target)/∂θ_j` by the ±π/2 shift rule applied per gate occurrence.
pub fn parameter_shift_grad(c: &Circuit, theta: &[f64], x: Option<f64>, target: u64) -> Result<Vec<f64>> {
    let base = bind(c, theta, x)?;
    check_cap(c.n(), DEFAULT_QUBIT_CAP)?;
    let mut grad = vec![0.0; c.param_count()];
    for (k, j) in param_occurrences(c) {
        let mut plus = base.clone();
        shift(&mut plus, k, FRAC_PI_2);
        let mut minus = base.clone();
        shift(&mut minus, k, -FRAC_PI_2);
        grad[j] += 0.5 * (simulate(&plus)?.probability(target) - simulate(&minus)?.probability(target));
    }
    Ok(grad)
}

/// Training probabilities and their parameter-shift gradients at every grid
/// point; `grad[i][j] = ∂p(xs[i])/∂θ_j`.
pub fn dqgm_probabilities_and_grad(
    c: &Circuit,
    theta: &[f64],
    xs: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let probs = dqgm_training_probabilities(c, theta, xs)?;
    let body = dqgm_body(c, theta)?;
    let mut grad = vec![vec![0.0; c.param_count()]; xs.len()];
    let occ = param_occurrences(c);
    let rows: Vec<(usize, Vec<f64>)> = occ
        .par_iter()
        .map(|&(k, j)| {
            // Index of gate k inside the body (the body drops the leading H
            // and every feature rotation).
            let removed = (0..k)
                .filter(|&i| i == 0 || matches!(c.gates()[i].angle(), Some(AngleRef::Feature(_))))
                .count();
            let mut diff = vec![0.0; xs.len()];
            for (sign, delta) in [(0.5, FRAC_PI_2), (-0.5, -FRAC_PI_2)] {
                let mut b = body.clone();
                shift(&mut b, k - removed, delta);
                let mut s = StateVector::zero(c.n());
                for g in b.gates.iter().rev() {
                    s.apply_gate_inverse(g);
                }
                for (d, p) in diff.iter_mut().zip(latent_probabilities(c, &s, xs)) {
                    *d += sign * p;
                }
            }
            (j, diff)
        })
        .collect();
    for (j, diff) in rows {
        for (i, d) in diff.into_iter().enumerate() {
            grad[i][j] += d;
        }
    }
    Ok((probs, grad))
}

/// Full output distribution and its parameter-shift Jacobian
/// (`grad[x][j]`).
pub fn distribution_and_grad(c: &Circuit, theta: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let base = bind(c, theta, None)?;
    let probs = simulate(&base)?.full_distribution().probs;
    let mut grad = vec![vec![0.0; c.param_count()]; probs.len()];
    let rows: Vec<(usize, Vec<f64>)> = param_occurrences(c)
        .par_iter()
        .map(|&(k, j)| {
            let mut plus = base.clone();
            shift(&mut plus, k, FRAC_PI_2);
            let mut minus = base.clone();
            shift(&mut minus, k, -FRAC_PI_2);
            let pp = simulate(&plus).expect("capacity checked").full_distribution().probs;
            let pm = simulate(&minus).expect("capacity checked").full_distribution().probs;
            (j, pp.iter().zip(&pm).map(|(a, b)| 0.5 * (a - b)).collect())
        })
        .collect();
    for (j, diff) in rows {
        for (x, d) in diff.into_iter().enumerate() {
            grad[x][j] += d;
        }
    }
    Ok((probs, grad))
}
