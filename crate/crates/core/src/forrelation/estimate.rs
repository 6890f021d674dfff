use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::latent::{HalfHadamard, LatentState, Polar};
use super::phase_poly::{phase_polynomial, PhasePolynomial};
use crate::circuit::{bind, check_bipartite, connectivity_graph, AngleRef, Bipartition, Circuit, Gate};
use crate::error::{Error, Result};
use crate::rng;

const STREAM: &str = "forrelation";

/// `m = ⌈4/ε²⌉`: the estimator variance is at most 1, so this gives
/// two-sigma coverage of an additive error `ε`.
pub fn samples_for_precision(eps: f64) -> usize {
    (4.0 / (eps * eps)).ceil() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub mean: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
    pub m: usize,
    pub seed: u64,
}

impl ComplexEstimate {
    pub fn stderr(&self) -> f64 {
        self.stderr_re.hypot(self.stderr_im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub m: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForrelationGradient {
    pub phi: ComplexEstimate,
    pub dphi: Vec<ComplexEstimate>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityGradient {
    pub p: RealEstimate,
    pub dp: Vec<RealEstimate>,
}

/// How a parameter enters one latent amplitude. `Phase*` terms add to the
/// log-derivative directly; `Factor*` terms shift `λ_k` of the `k`-th
/// Hadamarded qubit.
#[derive(Clone, Copy, Debug)]
enum Term {
    Phase(f64),
    PhaseBit(usize, f64),
    Factor(usize, f64),
    FactorBit(usize, usize, f64),
}

#[derive(Clone, Debug, Default)]
struct ParamTerms {
    alpha: Vec<Term>,
    beta: Vec<Term>,
}

/// Per-sample quantities at a fixed `y`, exposed for finite-difference
/// checks of the analytic partials.
#[derive(Clone, Debug)]
pub struct SampleTerms {
    pub p: f64,
    pub r: Complex64,
    pub dp: Vec<f64>,
    pub dr: Vec<Complex64>,
    /// `(dP/P)·R + dR`, the per-sample gradient of `Φ`.
    pub g: Vec<Complex64>,
}

/// `Φ = ⟨0|H U_2 H U_1 H|0⟩ = Σ_y P(y) R(y)` for one bound extended-IQP
/// circuit, compiled for Monte-Carlo evaluation.
#[derive(Clone, Debug)]
pub struct ForrelationProblem {
    n: usize,
    partition: Bipartition,
    poly1: PhasePolynomial,
    poly2: PhasePolynomial,
    alpha: HalfHadamard,
    beta: HalfHadamard,
    terms: Vec<ParamTerms>,
}

fn bipartition_of(c: &Circuit) -> Result<Bipartition> {
    check_bipartite(&connectivity_graph(c)).map_err(|e| match e {
        Error::OddCycle { cycle } => Error::NotBipartite(format!("odd cycle {cycle:?}")),
        other => other,
    })
}

impl ForrelationProblem {
    pub fn new(c: &Circuit, theta: &[f64], x: Option<f64>) -> Result<Self> {
        let (b1, b2) = c.extended_iqp_blocks()?;
        let partition = bipartition_of(c)?;
        let bound = bind(c, theta, x)?;
        let n = c.n();
        let poly1 = phase_polynomial(bound.slice(b1.clone()), n)?;
        let poly2 = phase_polynomial(bound.slice(b2.clone()), n)?;
        let alpha = HalfHadamard::new(&poly1, &partition.a)?;
        let beta = HalfHadamard::new(&poly2, &partition.b)?;

        let mut terms = vec![ParamTerms::default(); c.param_count()];
        for (range, on_alpha) in [(b1, true), (b2, false)] {
            let side = if on_alpha { &alpha } else { &beta };
            for g in &c.gates()[range] {
                let (j, qubits) = match *g {
                    Gate::Rz { qubit, angle: AngleRef::Param(j) } => (j, vec![qubit]),
                    Gate::Rzz { qubits: (p, q), angle: AngleRef::Param(j) } => (j, vec![p, q]),
                    _ => continue,
                };
                let list = if on_alpha { &mut terms[j].alpha } else { &mut terms[j].beta };
                list.push(Term::Phase(-0.5));
                for &q in &qubits {
                    list.push(match side.s_position(q) {
                        Some(k) => Term::Factor(k, 1.0),
                        None => Term::PhaseBit(q, 1.0),
                    });
                }
                if let [p, q] = qubits[..] {
                    let (s, t) = if side.s_position(p).is_some() { (p, q) } else { (q, p) };
                    let k = side.s_position(s).ok_or_else(|| {
                        Error::NotBipartite(format!("coupling ({p},{q}) does not cross the bipartition"))
                    })?;
                    list.push(Term::FactorBit(k, t, -2.0));
                }
            }
        }
        Ok(ForrelationProblem { n, partition, poly1, poly2, alpha, beta, terms })
    }

    /// The problem for output bitstring `x_out`: `⟨x_out|` is absorbed as
    /// `Z` gates (phase `π` on each set bit) into `U_2`.
    pub fn with_output(&self, x_out: u64) -> Result<Self> {
        let mut poly2 = self.poly2.clone();
        for q in 0..self.n {
            if x_out >> q & 1 == 1 {
                poly2.linear[q] += std::f64::consts::PI;
            }
        }
        let beta = HalfHadamard::new(&poly2, &self.partition.b)?;
        Ok(ForrelationProblem { poly2, beta, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn partition(&self) -> &Bipartition {
        &self.partition
    }

    /// Number of gradient components (the circuit's parameter count unless
    /// narrowed by [`Self::with_gradient_params`]).
    pub fn param_count(&self) -> usize {
        self.terms.len()
    }

    /// Restricts gradients to the listed parameters, in that order.
    pub fn with_gradient_params(mut self, keep: &[usize]) -> Result<Self> {
        if let Some(&j) = keep.iter().find(|&&j| j >= self.terms.len()) {
            return Err(Error::InvalidArgument(format!("parameter {j} out of range")));
        }
        self.terms = keep.iter().map(|&j| self.terms[j].clone()).collect();
        Ok(self)
    }

    pub fn poly1(&self) -> &PhasePolynomial {
        &self.poly1
    }

    pub fn poly2(&self) -> &PhasePolynomial {
        &self.poly2
    }

    pub fn alpha_state(&self) -> LatentState {
        LatentState::alpha(self.poly1.clone(), self.partition.clone()).expect("validated at construction")
    }

    pub fn beta_state(&self) -> LatentState {
        LatentState::beta(self.poly2.clone(), self.partition.clone()).expect("validated at construction")
    }

    /// `P(y) = |⟨y|α⟩|²`
    pub fn probability(&self, y: u64) -> f64 {
        self.alpha.probability(y)
    }

    /// `R(y) = ⟨β|y⟩ / ⟨α|y⟩`
    pub fn ratio(&self, y: u64) -> Result<Complex64> {
        let a = self.alpha.evaluate(y, None);
        if a.zeros > 0 {
            return Err(Error::DegenerateSample(y));
        }
        let b = self.beta.evaluate(y, None);
        Ok(if b.zeros > 0 { Complex64::new(0.0, 0.0) } else { b.ratio_conj(&a) })
    }

    #[inline]
    fn dln(terms: &[Term], y: u64, dlnh: &[Complex64]) -> Complex64 {
        let mut d = Complex64::new(0.0, 0.0);
        for t in terms {
            match *t {
                Term::Phase(c) => d.im += c,
                Term::PhaseBit(q, c) => {
                    if y >> q & 1 == 1 {
                        d.im += c
                    }
                }
                Term::Factor(k, c) => d += dlnh[k] * c,
                Term::FactorBit(k, q, c) => {
                    if y >> q & 1 == 1 {
                        d += dlnh[k] * c
                    }
                }
            }
        }
        d
    }

    /// `d⟨β|y⟩ / conj⟨y|α⟩` when exactly one β factor (index `k0`) vanishes;
    /// `dlnh[k0]` then holds `h'` rather than `h'/h`.
    #[inline]
    fn single_zero_term(terms: &[Term], y: u64, k0: usize, dlnh: &[Complex64], r_nz: Complex64) -> Complex64 {
        let mut w = 0.0;
        for t in terms {
            match *t {
                Term::Factor(k, c) if k == k0 => w += c,
                Term::FactorBit(k, q, c) if k == k0 && y >> q & 1 == 1 => w += c,
                _ => {}
            }
        }
        r_nz * dlnh[k0] * w
    }

    /// Fills `g[j] = R·dlnα_j + d⟨β|y⟩_j / conj⟨y|α⟩` for every parameter.
    #[inline]
    fn sample_gradient(
        &self,
        y: u64,
        a: &Polar,
        b: &Polar,
        dlnh_a: &[Complex64],
        dlnh_b: &[Complex64],
        g: &mut [Complex64],
    ) {
        match b.zeros {
            0 => {
                let r = b.ratio_conj(a);
                for (gj, t) in g.iter_mut().zip(&self.terms) {
                    *gj = r * (Self::dln(&t.alpha, y, dlnh_a) + Self::dln(&t.beta, y, dlnh_b));
                }
            }
            1 => {
                let r_nz = b.ratio_conj(a);
                for (gj, t) in g.iter_mut().zip(&self.terms) {
                    *gj = Self::single_zero_term(&t.beta, y, b.zero_k, dlnh_b, r_nz);
                }
            }
            _ => g.iter_mut().for_each(|gj| *gj = Complex64::new(0.0, 0.0)),
        }
    }

    pub fn per_sample(&self, y: u64) -> Result<SampleTerms> {
        let mut dlnh_a = vec![Complex64::new(0.0, 0.0); self.partition.a.len()];
        let mut dlnh_b = vec![Complex64::new(0.0, 0.0); self.partition.b.len()];
        let a = self.alpha.evaluate(y, Some(&mut dlnh_a));
        if a.zeros > 0 {
            return Err(Error::DegenerateSample(y));
        }
        let b = self.beta.evaluate(y, Some(&mut dlnh_b));
        let mut g = vec![Complex64::new(0.0, 0.0); self.terms.len()];
        self.sample_gradient(y, &a, &b, &dlnh_a, &dlnh_b, &mut g);
        let p = a.value().norm_sqr();
        let r = if b.zeros > 0 { Complex64::new(0.0, 0.0) } else { b.ratio_conj(&a) };
        let mut dp = Vec::with_capacity(g.len());
        let mut dr = Vec::with_capacity(g.len());
        for (t, gj) in self.terms.iter().zip(&g) {
            let re_dln = Self::dln(&t.alpha, y, &dlnh_a).re;
            dp.push(2.0 * p * re_dln);
            dr.push(gj - r * (2.0 * re_dln));
        }
        Ok(SampleTerms { p, r, dp, dr, g })
    }

    fn run<T: Send>(
        &self,
        m: usize,
        seed: u64,
        init: impl Fn() -> T + Sync,
        step: impl Fn(&mut T, &mut rand_chacha::ChaCha8Rng) -> Result<()> + Sync,
    ) -> Result<Vec<T>> {
        let chunks: Vec<(u64, usize)> = rng::chunks(m).collect();
        chunks
            .into_par_iter()
            .map(|(k, len)| {
                let mut r = rng::chunk_stream(seed, STREAM, k);
                let mut acc = init();
                for _ in 0..len {
                    step(&mut acc, &mut r)?;
                }
                Ok(acc)
            })
            .collect()
    }

    /// Monte-Carlo estimate of `Φ` from `m` draws of `P`.
    pub fn estimate(&self, m: usize, seed: u64) -> Result<ComplexEstimate> {
        Ok(self.moments(m, seed)?.phi(seed))
    }

    /// Bias-corrected estimate of `|Φ|²`, clamped to `[0, 1]`.
    pub fn estimate_probability(&self, m: usize, seed: u64) -> Result<RealEstimate> {
        Ok(self.moments(m, seed)?.probability(seed))
    }

    fn moments(&self, m: usize, seed: u64) -> Result<Moments> {
        if m == 0 {
            return Err(Error::InvalidArgument("at least one sample is required".into()));
        }
        let parts = self.run(m, seed, Moments::default, |acc, r| {
            let (y, a) = self.alpha.draw(r, None);
            if a.zeros > 0 || a.mag == 0.0 {
                return Err(Error::DegenerateSample(y));
            }
            let b = self.beta.evaluate(y, None);
            let ratio = if b.zeros > 0 { Complex64::new(0.0, 0.0) } else { b.ratio_conj(&a) };
            acc.push(ratio);
            Ok(())
        })?;
        Ok(parts.into_iter().fold(Moments::default(), Moments::merge))
    }

    /// `Φ̂` and `dΦ̂/dθ` from a single sample set.
    pub fn gradient(&self, m: usize, seed: u64) -> Result<(Moments, Vec<GradMoments>)> {
        if m == 0 {
            return Err(Error::InvalidArgument("at least one sample is required".into()));
        }
        let p = self.terms.len();
        let (na, nb) = (self.partition.a.len(), self.partition.b.len());
        struct Scratch {
            mom: Moments,
            grad: Vec<GradMoments>,
            dlnh_a: Vec<Complex64>,
            dlnh_b: Vec<Complex64>,
            g: Vec<Complex64>,
        }
        let zero = Complex64::new(0.0, 0.0);
        let parts = self.run(
            m,
            seed,
            || Scratch {
                mom: Moments::default(),
                grad: vec![GradMoments::default(); p],
                dlnh_a: vec![zero; na],
                dlnh_b: vec![zero; nb],
                g: vec![zero; p],
            },
            |s, r| {
                let (y, a) = self.alpha.draw(r, Some(&mut s.dlnh_a));
                if a.zeros > 0 || a.mag == 0.0 {
                    return Err(Error::DegenerateSample(y));
                }
                let b = self.beta.evaluate(y, Some(&mut s.dlnh_b));
                let ratio = if b.zeros > 0 { zero } else { b.ratio_conj(&a) };
                s.mom.push(ratio);
                self.sample_gradient(y, &a, &b, &s.dlnh_a, &s.dlnh_b, &mut s.g);
                for (gm, gj) in s.grad.iter_mut().zip(&s.g) {
                    gm.push(ratio, *gj);
                }
                Ok(())
            },
        )?;
        let mut mom = Moments::default();
        let mut grad = vec![GradMoments::default(); p];
        for s in parts {
            mom = mom.merge(s.mom);
            for (g, h) in grad.iter_mut().zip(s.grad) {
                g.merge(&h);
            }
        }
        Ok((mom, grad))
    }

    pub fn forrelation_gradient(&self, m: usize, seed: u64) -> Result<ForrelationGradient> {
        let (mom, grad) = self.gradient(m, seed)?;
        Ok(ForrelationGradient {
            phi: mom.phi(seed),
            dphi: grad.iter().map(|g| g.dphi(&mom, seed)).collect(),
        })
    }

    pub fn probability_gradient(&self, m: usize, seed: u64) -> Result<ProbabilityGradient> {
        let (mom, grad) = self.gradient(m, seed)?;
        Ok(ProbabilityGradient {
            p: mom.probability(seed),
            dp: grad.iter().map(|g| g.dp(&mom, seed)).collect(),
        })
    }
}

fn cov(sxy: f64, sx: f64, sy: f64, m: usize) -> f64 {
    if m < 2 {
        return 0.0;
    }
    let mf = m as f64;
    (sxy - sx * sy / mf) / (mf - 1.0)
}

fn var(sxx: f64, sx: f64, m: usize) -> f64 {
    cov(sxx, sx, sx, m).max(0.0)
}

/// Running sums of `R` and its second moments.
#[derive(Clone, Copy, Debug, Default)]
pub struct Moments {
    m: usize,
    sr: f64,
    si: f64,
    srr: f64,
    sii: f64,
    sri: f64,
}

impl Moments {
    #[inline]
    fn push(&mut self, r: Complex64) {
        self.m += 1;
        self.sr += r.re;
        self.si += r.im;
        self.srr += r.re * r.re;
        self.sii += r.im * r.im;
        self.sri += r.re * r.im;
    }

    fn merge(self, o: Moments) -> Moments {
        Moments {
            m: self.m + o.m,
            sr: self.sr + o.sr,
            si: self.si + o.si,
            srr: self.srr + o.srr,
            sii: self.sii + o.sii,
            sri: self.sri + o.sri,
        }
    }

    pub fn count(&self) -> usize {
        self.m
    }

    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.sr, self.si) / self.m as f64
    }

    /// Sample covariance of `(Re R, Im R)`: `(var_re, var_im, cov)`.
    pub fn covariance(&self) -> (f64, f64, f64) {
        (
            var(self.srr, self.sr, self.m),
            var(self.sii, self.si, self.m),
            cov(self.sri, self.sr, self.si, self.m),
        )
    }

    /// Sample variance of `R` (`E|R - Φ|²`).
    pub fn variance(&self) -> f64 {
        let (vr, vi, _) = self.covariance();
        vr + vi
    }

    pub fn phi(&self, seed: u64) -> ComplexEstimate {
        let (vr, vi, _) = self.covariance();
        let mf = self.m as f64;
        ComplexEstimate {
            mean: self.mean(),
            stderr_re: (vr / mf).sqrt(),
            stderr_im: (vi / mf).sqrt(),
            m: self.m,
            seed,
        }
    }

    /// `|Φ̂|² − (se_re² + se_im²)` clamped to `[0, 1]`, with a delta-method
    /// standard error plus the second-order `|δΦ|²` term.
    pub fn probability(&self, seed: u64) -> RealEstimate {
        let phi = self.mean();
        let (vr, vi, cri) = self.covariance();
        let mf = self.m as f64;
        let raw = phi.norm_sqr() - (vr + vi) / mf;
        let first = 4.0 * (phi.re * phi.re * vr + 2.0 * phi.re * phi.im * cri + phi.im * phi.im * vi) / mf;
        let second = 2.0 * (vr * vr + 2.0 * cri * cri + vi * vi) / (mf * mf);
        RealEstimate { mean: raw.clamp(0.0, 1.0), stderr: (first + second).sqrt(), m: self.m, seed }
    }
}

/// Per-parameter sums of the gradient samples `G` and their cross moments
/// with `R`.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradMoments {
    sg: [f64; 2],
    sgg: [f64; 3],
    /// `Σ Rr·gr, Σ Rr·gi, Σ Ri·gr, Σ Ri·gi`
    srg: [f64; 4],
}

impl GradMoments {
    #[inline]
    fn push(&mut self, r: Complex64, g: Complex64) {
        self.sg[0] += g.re;
        self.sg[1] += g.im;
        self.sgg[0] += g.re * g.re;
        self.sgg[1] += g.im * g.im;
        self.sgg[2] += g.re * g.im;
        self.srg[0] += r.re * g.re;
        self.srg[1] += r.re * g.im;
        self.srg[2] += r.im * g.re;
        self.srg[3] += r.im * g.im;
    }

    fn merge(&mut self, o: &GradMoments) {
        for k in 0..2 {
            self.sg[k] += o.sg[k];
        }
        for k in 0..3 {
            self.sgg[k] += o.sgg[k];
        }
        for k in 0..4 {
            self.srg[k] += o.srg[k];
        }
    }

    pub fn dphi(&self, mom: &Moments, seed: u64) -> ComplexEstimate {
        let m = mom.m;
        let mf = m as f64;
        ComplexEstimate {
            mean: Complex64::new(self.sg[0], self.sg[1]) / mf,
            stderr_re: (var(self.sgg[0], self.sg[0], m) / mf).sqrt(),
            stderr_im: (var(self.sgg[1], self.sg[1], m) / mf).sqrt(),
            m,
            seed,
        }
    }

    /// `d|Φ|²/dθ = 2 Re(conj(Φ̂) Ĝ)`, bias-corrected for the covariance of
    /// `Φ̂` and `Ĝ` (same samples).
    pub fn dp(&self, mom: &Moments, seed: u64) -> RealEstimate {
        let m = mom.m;
        let mf = m as f64;
        let phi = mom.mean();
        let g = Complex64::new(self.sg[0], self.sg[1]) / mf;
        let (c00, c11, c01) = mom.covariance();
        let c22 = var(self.sgg[0], self.sg[0], m);
        let c33 = var(self.sgg[1], self.sg[1], m);
        let c23 = cov(self.sgg[2], self.sg[0], self.sg[1], m);
        let c02 = cov(self.srg[0], mom.sr, self.sg[0], m);
        let c03 = cov(self.srg[1], mom.sr, self.sg[1], m);
        let c12 = cov(self.srg[2], mom.si, self.sg[0], m);
        let c13 = cov(self.srg[3], mom.si, self.sg[1], m);
        let v = [g.re, g.im, phi.re, phi.im];
        let c = [
            [c00, c01, c02, c03],
            [c01, c11, c12, c13],
            [c02, c12, c22, c23],
            [c03, c13, c23, c33],
        ];
        let mut var_u = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                var_u += v[a] * c[a][b] * v[b];
            }
        }
        let mean = 2.0 * (phi.re * g.re + phi.im * g.im) - 2.0 * (c02 + c13) / mf;
        let var_dp = 4.0 * var_u.max(0.0) / mf + 4.0 * (c00 + c11) * (c22 + c33) / (mf * mf);
        RealEstimate { mean, stderr: var_dp.sqrt(), m, seed }
    }
}

pub fn estimate_forrelation(c: &Circuit, theta: &[f64], x: Option<f64>, m: usize, seed: u64) -> Result<ComplexEstimate> {
    ForrelationProblem::new(c, theta, x)?.estimate(m, seed)
}

/// Estimate of `p(0^n) = |Φ|²`.
pub fn estimate_p_zero(c: &Circuit, theta: &[f64], x: Option<f64>, m: usize, seed: u64) -> Result<RealEstimate> {
    ForrelationProblem::new(c, theta, x)?.estimate_probability(m, seed)
}

/// Estimate of `p(x_out) = |⟨x_out|C|0⟩|²`.
pub fn estimate_p_bitstring(
    c: &Circuit,
    theta: &[f64],
    x: Option<f64>,
    x_out: u64,
    m: usize,
    seed: u64,
) -> Result<RealEstimate> {
    ForrelationProblem::new(c, theta, x)?.with_output(x_out)?.estimate_probability(m, seed)
}

pub fn grad_forrelation(c: &Circuit, theta: &[f64], x: Option<f64>, m: usize, seed: u64) -> Result<ForrelationGradient> {
    ForrelationProblem::new(c, theta, x)?.forrelation_gradient(m, seed)
}

pub fn grad_p(c: &Circuit, theta: &[f64], x: Option<f64>, m: usize, seed: u64) -> Result<ProbabilityGradient> {
    ForrelationProblem::new(c, theta, x)?.probability_gradient(m, seed)
}

pub fn grad_p_bitstring(
    c: &Circuit,
    theta: &[f64],
    x: Option<f64>,
    x_out: u64,
    m: usize,
    seed: u64,
) -> Result<ProbabilityGradient> {
    ForrelationProblem::new(c, theta, x)?.with_output(x_out)?.probability_gradient(m, seed)
}
