//! Two-body expectations `⟨Z_i Z_j⟩` of `|ψ⟩ = H U_2 H U_1 H|0⟩`.
//!
//! `U_2† X_i X_j U_2` maps `|z⟩` to `e^{i(f_2(z) − f_2(z̄))}|z̄⟩` where `z̄`
//! flips bits `i, j`. Splitting by `(z_i, z_j) = (c, d)`:
//!
//! `⟨Z_i Z_j⟩ = Re Σ_{cd} μ_cd ⟨φ| O_cd |φ⟩`, `|φ⟩ = H U_1 H|0⟩`,
//!
//! with `μ_cd` the `(c̄d̄, cd)` element of the dense 4×4 matrix
//! `U_ij† (X⊗X) U_ij` (the part of `U_2` acting on `i, j` alone) and
//! `O_cd = |c̄⟩⟨c|_i ⊗ |d̄⟩⟨d|_j ⊗_k diag(1, e^{iε_k})` carrying the phases
//! `ε_k = (2c−1) b_ik + (2d−1) b_jk` of the other `U_2` couplings of `i`
//! and `j`. The other 12 terms of the 16-term `(a,b,c,d)` expansion vanish
//! because `X⊗X` is a permutation. Each `⟨φ|O|φ⟩` is a product-operator
//! insertion estimated by sampling one side of the bipartite factorisation.

use num_complex::Complex64;
use rayon::prelude::*;

use super::estimate::{ComplexEstimate, ForrelationProblem, RealEstimate};
use super::latent::HalfHadamard;
use super::phase_poly::PhasePolynomial;
use crate::circuit::{Bipartition, Circuit};
use crate::error::{Error, Result};
use crate::rng;
use crate::statevector::GammaConvention;

pub type Mat2 = [[Complex64; 2]; 2];

/// Largest `log2` of the per-sample enumeration an insertion may need.
pub const MAX_INSERTION_SUPPORT: usize = 20;

const STREAM: &str = "insertion";

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn hxh(x: &Mat2) -> Mat2 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let hm = [[c(h), c(h)], [c(h), c(-h)]];
    let mut t = [[c(0.0); 2]; 2];
    let mut out = [[c(0.0); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            for k in 0..2 {
                t[a][b] += hm[a][k] * x[k][b];
            }
        }
    }
    for a in 0..2 {
        for b in 0..2 {
            for k in 0..2 {
                out[a][b] += t[a][k] * hm[k][b];
            }
        }
    }
    out
}

fn column_nnz(x: &Mat2) -> usize {
    (0..2)
        .map(|b| (0..2).filter(|&a| x[a][b] != c(0.0)).count())
        .max()
        .unwrap()
}

/// `⟨φ| ⊗_q O_q |φ⟩` for `|φ⟩ = H_As |κ⟩`, `|κ⟩ = H_Bs U_1|+⟩`: sample
/// `y ~ |κ(y)|²` and average `⟨κ|Õ|y⟩ / conj κ(y)` with
/// `Õ = ⊗_{As} (H O_q H) ⊗_{Bs} O_q`. Since `‖Õ‖ ≤ 1` for operators of norm
/// at most one, the per-sample variance is at most 1.
struct Insertion {
    kappa: HalfHadamard,
    /// `(qubit, effective matrix)` for every non-identity operator.
    ops: Vec<(usize, Mat2)>,
}

impl Insertion {
    fn new(poly1: &PhasePolynomial, sampled: &[usize], sampled_mask: u64, ops: &[(usize, Mat2)]) -> Result<Self> {
        let kappa = HalfHadamard::new(poly1, sampled)?;
        let ops = ops
            .iter()
            .map(|&(q, x)| (q, if sampled_mask >> q & 1 == 1 { x } else { hxh(&x) }))
            .collect();
        Ok(Insertion { kappa, ops })
    }

    fn log2_branching(&self) -> f64 {
        self.ops.iter().map(|(_, x)| (column_nnz(x) as f64).log2()).sum()
    }

    /// `⟨κ|Õ|y⟩ / conj κ(y)`, given `κ(y)`.
    fn value(&self, y: u64, kappa_y: Complex64, branches: &mut Vec<(u64, Complex64)>) -> Complex64 {
        branches.clear();
        branches.push((y, c(1.0)));
        for &(q, x) in &self.ops {
            let col = (y >> q & 1) as usize;
            let len = branches.len();
            for idx in 0..len {
                let (yp, w) = branches[idx];
                let mut first = true;
                for row in 0..2 {
                    let e = x[row][col];
                    if e == c(0.0) {
                        continue;
                    }
                    let yq = (yp & !(1 << q)) | ((row as u64) << q);
                    if first {
                        branches[idx] = (yq, w * e);
                        first = false;
                    } else {
                        branches.push((yq, w * e));
                    }
                }
                if first {
                    branches[idx].1 = c(0.0);
                }
            }
        }
        let mut total = c(0.0);
        for &(yp, w) in branches.iter() {
            if w != c(0.0) {
                total += self.kappa.amplitude(yp).conj() * w;
            }
        }
        total / kappa_y.conj()
    }
}

/// Picks the sampled side so that the per-sample enumeration is smallest.
fn plan(
    poly1: &PhasePolynomial,
    part: &Bipartition,
    op_sets: &[Vec<(usize, Mat2)>],
) -> Result<Vec<Insertion>> {
    let mask = |v: &[usize]| v.iter().fold(0u64, |m, &q| m | 1 << q);
    let mut best: Option<(f64, Vec<Insertion>)> = None;
    for sampled in [&part.b, &part.a] {
        let sm = mask(sampled);
        let ins = op_sets
            .iter()
            .map(|ops| Insertion::new(poly1, sampled, sm, ops))
            .collect::<Result<Vec<_>>>()?;
        let cost = ins.iter().map(Insertion::log2_branching).fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, ins));
        }
    }
    let (cost, ins) = best.unwrap();
    if cost > MAX_INSERTION_SUPPORT as f64 {
        return Err(Error::CapacityExceeded { n: cost.ceil() as usize, cap: MAX_INSERTION_SUPPORT });
    }
    Ok(ins)
}

/// Shared-sample estimate of `Re Σ_k w_k ⟨φ|O_k|φ⟩`.
fn run_weighted(
    insertions: &[Insertion],
    weights: &[Complex64],
    m: usize,
    seed: u64,
) -> Result<RealEstimate> {
    if m == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let kappa = &insertions[0].kappa;
    let chunks: Vec<(u64, usize)> = rng::chunks(m).collect();
    let parts: Vec<(f64, f64)> = chunks
        .into_par_iter()
        .map(|(k, len)| {
            let mut r = rng::chunk_stream(seed, STREAM, k);
            let mut branches = Vec::new();
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..len {
                let y = kappa.sample(&mut r);
                let ky = kappa.amplitude(y);
                let mut z = c(0.0);
                for (ins, w) in insertions.iter().zip(weights) {
                    z += w * ins.value(y, ky, &mut branches);
                }
                s += z.re;
                ss += z.re * z.re;
            }
            (s, ss)
        })
        .collect();
    let (s, ss) = parts.into_iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let mf = m as f64;
    let mean = s / mf;
    let var = if m > 1 { ((ss - s * s / mf) / (mf - 1.0)).max(0.0) } else { 0.0 };
    Ok(RealEstimate { mean, stderr: (var / mf).sqrt(), m, seed })
}

/// `⟨φ| ⊗_q O_q |φ⟩` with `|φ⟩ = H U_1 H|0⟩` the state after the first
/// block of `problem`, and identity on qubits not listed in `ops`.
pub fn estimate_insertion(
    problem: &ForrelationProblem,
    ops: &[(usize, Mat2)],
    m: usize,
    seed: u64,
) -> Result<ComplexEstimate> {
    let ins = plan(problem.poly1(), problem.partition(), &[ops.to_vec()])?;
    let re = run_weighted(&ins, &[c(1.0)], m, seed)?;
    let im = run_weighted(&ins, &[Complex64::new(0.0, -1.0)], m, seed)?;
    Ok(ComplexEstimate {
        mean: Complex64::new(re.mean, im.mean),
        stderr_re: re.stderr,
        stderr_im: im.stderr,
        m,
        seed,
    })
}

/// `⟨c̄ d̄| U_ij† (X⊗X) U_ij |c d⟩` by dense 4×4 arithmetic, where `U_ij` is
/// the part of `poly` acting on `i` and `j` alone. Basis index is `c + 2d`.
pub fn two_qubit_flip_element(poly: &PhasePolynomial, i: usize, j: usize, cbit: usize, dbit: usize) -> Complex64 {
    let mut u = [[c(0.0); 4]; 4];
    for idx in 0..4 {
        let (zc, zd) = ((idx & 1) as f64, (idx >> 1) as f64);
        let phase = poly.linear[i] * zc + poly.linear[j] * zd + poly.coupling(i, j) * zc * zd;
        u[idx][idx] = Complex64::from_polar(1.0, phase);
    }
    let mut xx = [[c(0.0); 4]; 4];
    for idx in 0..4 {
        xx[idx ^ 3][idx] = c(1.0);
    }
    let mul = |a: &[[Complex64; 4]; 4], b: &[[Complex64; 4]; 4]| {
        let mut out = [[c(0.0); 4]; 4];
        for r in 0..4 {
            for s in 0..4 {
                for k in 0..4 {
                    out[r][s] += a[r][k] * b[k][s];
                }
            }
        }
        out
    };
    let mut udag = [[c(0.0); 4]; 4];
    for r in 0..4 {
        for s in 0..4 {
            udag[r][s] = u[s][r].conj();
        }
    }
    let full = mul(&udag, &mul(&xx, &u));
    let col = cbit + 2 * dbit;
    full[col ^ 3][col]
}

/// `⟨Z_i Z_j⟩` of the circuit output state.
pub fn estimate_zz_expectation(
    circuit: &Circuit,
    theta: &[f64],
    x: Option<f64>,
    i: usize,
    j: usize,
    m: usize,
    seed: u64,
) -> Result<RealEstimate> {
    let problem = ForrelationProblem::new(circuit, theta, x)?;
    zz_on_problem(&problem, i, j, m, seed)
}

fn zz_on_problem(problem: &ForrelationProblem, i: usize, j: usize, m: usize, seed: u64) -> Result<RealEstimate> {
    let n = problem.n();
    if i == j || i >= n || j >= n {
        return Err(Error::InvalidArgument(format!("⟨Z_{i} Z_{j}⟩ needs distinct qubits below {n}")));
    }
    let poly2 = problem.poly2();
    let mut op_sets = Vec::with_capacity(4);
    let mut weights = Vec::with_capacity(4);
    for dbit in 0..2 {
        for cbit in 0..2 {
            let flip = |b: usize| {
                let mut x = [[c(0.0); 2]; 2];
                x[1 - b][b] = c(1.0);
                x
            };
            let mut ops = vec![(i, flip(cbit)), (j, flip(dbit))];
            for k in (0..n).filter(|&k| k != i && k != j) {
                let (bi, bj) = (poly2.coupling(i, k), poly2.coupling(j, k));
                if bi != 0.0 || bj != 0.0 {
                    let eps = (2.0 * cbit as f64 - 1.0) * bi + (2.0 * dbit as f64 - 1.0) * bj;
                    ops.push((k, [[c(1.0), c(0.0)], [c(0.0), Complex64::from_polar(1.0, eps)]]));
                }
            }
            op_sets.push(ops);
            weights.push(two_qubit_flip_element(poly2, i, j, cbit, dbit));
        }
    }
    let ins = plan(problem.poly1(), problem.partition(), &op_sets)?;
    run_weighted(&ins, &weights, m, seed)
}

/// `Γ` under the chosen pair convention; pairs use independent streams and
/// their standard errors add in quadrature.
pub fn estimate_gamma(
    circuit: &Circuit,
    theta: &[f64],
    x: Option<f64>,
    convention: GammaConvention,
    m: usize,
    seed: u64,
) -> Result<RealEstimate> {
    let problem = ForrelationProblem::new(circuit, theta, x)?;
    let n = problem.n();
    let (mut mean, mut var) = (0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let e = zz_on_problem(&problem, i, j, m, rng::sub_seed(seed, &format!("pair {i} {j}")))?;
            mean += e.mean;
            var += e.stderr * e.stderr;
        }
    }
    let w = convention.pair_weight();
    Ok(RealEstimate { mean: w * mean, stderr: w * var.sqrt(), m, seed })
}
