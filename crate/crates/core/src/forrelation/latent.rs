//! Half-Hadamard states `⟨y| H_S U |+⟩` for a diagonal `U` whose phase
//! polynomial has no coupling inside `S`.
//!
//! With `y_T` fixed the phase is affine in `z_S`, so the Hadamard sum over
//! `z_S` factorises into one factor per qubit of `S`:
//! `⟨y|H_S U|+⟩ = 2^{-|T|/2} e^{iφ(y_T)} Π_s h(λ_s(y_T), y_s)` with
//! `h(λ, b) = (1 + (-1)^b e^{iλ}) / 2`.

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use rand::{Rng, RngCore};

use super::phase_poly::PhasePolynomial;
use crate::circuit::Bipartition;
use crate::error::{Error, Result};
use crate::rng;

const FOUR_PI: f64 = 2.0 * TAU;
const RESCALE_BELOW: f64 = 1.0 / (1u128 << 100) as f64;
const RESCALE_BY: f64 = (1u128 << 100) as f64;

/// An amplitude (or a product of its non-vanishing factors) in polar form:
/// `mag · 2^{-100·rescales} · e^{i·phase}` with a signed `mag`.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Polar {
    pub mag: f64,
    pub rescales: i32,
    pub phase: f64,
    /// Number of factors that vanish exactly.
    pub zeros: u32,
    /// Index (into `S`) of the last vanishing factor.
    pub zero_k: usize,
}

impl Polar {
    fn new(mag: f64, phase: f64) -> Self {
        Polar { mag, rescales: 0, phase, zeros: 0, zero_k: 0 }
    }

    #[inline]
    fn push(&mut self, k: usize, mag: f64, phase: f64) {
        if mag == 0.0 {
            self.zeros += 1;
            self.zero_k = k;
            return;
        }
        self.phase += phase;
        self.mag *= mag;
        if self.mag.abs() < RESCALE_BELOW {
            self.mag *= RESCALE_BY;
            self.rescales += 1;
        }
    }

    /// The product of non-vanishing factors.
    pub fn nonzero_value(&self) -> Complex64 {
        let m = self.mag * RESCALE_BELOW.powi(self.rescales);
        Complex64::from_polar(m, self.phase)
    }

    pub fn value(&self) -> Complex64 {
        if self.zeros > 0 {
            Complex64::new(0.0, 0.0)
        } else {
            self.nonzero_value()
        }
    }

    /// `self / conj(other)` over non-vanishing factors, without
    /// materialising either magnitude.
    pub fn ratio_conj(&self, other: &Polar) -> Complex64 {
        let m = self.mag / other.mag * RESCALE_BELOW.powi(self.rescales - other.rescales);
        Complex64::from_polar(m, self.phase + other.phase)
    }
}

/// `(sin x, cos x)` for `|x| ≤ π`, without the data-dependent branches of
/// the libm routine: quadrant reduction, then the fdlibm polynomials on
/// `[-π/4, π/4]`.
#[inline]
fn sin_cos_small(x: f64) -> (f64, f64) {
    const PIO2_HI: f64 = 1.570_796_326_734_125_6;
    const PIO2_LO: f64 = 6.077_100_506_506_192e-11;
    const S: [f64; 6] = [
        -1.666_666_666_666_663_2e-1,
        8.333_333_333_322_49e-3,
        -1.984_126_982_985_795e-4,
        2.755_731_370_707_007e-6,
        -2.505_076_025_340_686_3e-8,
        1.589_690_995_211_55e-10,
    ];
    const C: [f64; 6] = [
        4.166_666_666_666_66e-2,
        -1.388_888_888_887_411e-3,
        2.480_158_728_947_673e-5,
        -2.755_731_435_139_066_3e-7,
        2.087_572_321_298_175e-9,
        -1.135_964_755_778_819_5e-11,
    ];
    let q = (x * std::f64::consts::FRAC_2_PI).round();
    let r = x - q * PIO2_HI - q * PIO2_LO;
    let z = r * r;
    let ps = S[0] + z * (S[1] + z * (S[2] + z * (S[3] + z * (S[4] + z * S[5]))));
    let pc = C[0] + z * (C[1] + z * (C[2] + z * (C[3] + z * (C[4] + z * C[5]))));
    let sr = r + r * z * ps;
    let cr = 1.0 - 0.5 * z + z * z * pc;
    let q = q as i64;
    let (s, c) = if q & 1 == 0 { (sr, cr) } else { (cr, -sr) };
    let flip = if q & 2 == 0 { 1.0 } else { -1.0 };
    (flip * s, flip * c)
}

#[derive(Clone, Debug)]
pub struct HalfHadamard {
    n: usize,
    s: Vec<usize>,
    t: Vec<usize>,
    s_index: Vec<Option<usize>>,
    constant: f64,
    linear: Vec<f64>,
    /// Byte lookup tables over the bits of `y_T`, 8 positions of `T` per
    /// chunk: `lam[(k·chunks + c)·256 + byte]` sums the `S`–`T` couplings of
    /// the `k`-th Hadamarded qubit, `phase[c·256 + byte]` the linear phases.
    lam: Vec<f64>,
    phase: Vec<f64>,
    chunks: usize,
    tt: Vec<(usize, usize, f64)>,
    norm: f64,
}

/// Subset sums `table[byte] = Σ_{bit i of byte} w[i]` for up to 8 weights.
fn byte_table(w: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for byte in 1..256usize {
        let low = byte.trailing_zeros() as usize;
        out[byte] = out[byte & (byte - 1)] + w.get(low).copied().unwrap_or(0.0);
    }
}

impl HalfHadamard {
    /// `hadamarded` lists the qubits of `S`.
    pub fn new(poly: &PhasePolynomial, hadamarded: &[usize]) -> Result<Self> {
        let n = poly.n;
        let mut s_index = vec![None; n];
        for (k, &q) in hadamarded.iter().enumerate() {
            s_index[q] = Some(k);
        }
        let t: Vec<usize> = (0..n).filter(|&q| s_index[q].is_none()).collect();
        let mut t_index = vec![0; n];
        for (i, &q) in t.iter().enumerate() {
            t_index[q] = i;
        }
        let mut st = vec![0.0; hadamarded.len() * t.len()];
        let mut tt = Vec::new();
        for (&(p, q), &b) in &poly.quadratic {
            match (s_index[p], s_index[q]) {
                (Some(_), Some(_)) => {
                    return Err(Error::NotBipartite(format!(
                        "coupling ({p},{q}) lies inside the Hadamard side"
                    )))
                }
                (Some(k), None) => st[k * t.len() + t_index[q]] += b,
                (None, Some(k)) => st[k * t.len() + t_index[p]] += b,
                (None, None) => tt.push((p, q, b)),
            }
        }
        let chunks = t.len().div_ceil(8);
        let mut lam = vec![0.0; hadamarded.len() * chunks * 256];
        for k in 0..hadamarded.len() {
            let row = &st[k * t.len()..(k + 1) * t.len()];
            for c in 0..chunks {
                let w = &row[8 * c..(8 * c + 8).min(t.len())];
                byte_table(w, &mut lam[(k * chunks + c) * 256..][..256]);
            }
        }
        let t_linear: Vec<f64> = t.iter().map(|&q| poly.linear[q]).collect();
        let mut phase = vec![0.0; chunks * 256];
        for c in 0..chunks {
            byte_table(&t_linear[8 * c..(8 * c + 8).min(t.len())], &mut phase[c * 256..][..256]);
        }
        Ok(HalfHadamard {
            n,
            s: hadamarded.to_vec(),
            norm: 2f64.powf(-(t.len() as f64) / 2.0),
            t,
            s_index,
            constant: poly.constant,
            linear: poly.linear.clone(),
            lam,
            phase,
            chunks,
            tt,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hadamarded(&self) -> &[usize] {
        &self.s
    }

    pub fn plain(&self) -> &[usize] {
        &self.t
    }

    pub fn s_position(&self, q: usize) -> Option<usize> {
        self.s_index[q]
    }

    /// The bits of `y` on `T`, packed in order.
    #[inline]
    fn pack_t(&self, y: u64) -> u64 {
        let mut packed = 0;
        for (i, &q) in self.t.iter().enumerate() {
            packed |= (y >> q & 1) << i;
        }
        packed
    }

    #[inline]
    fn t_phase(&self, y: u64, packed: u64) -> f64 {
        let mut phi = self.constant;
        for c in 0..self.chunks {
            phi += self.phase[c * 256 + (packed >> (8 * c) & 0xff) as usize];
        }
        for &(p, q, b) in &self.tt {
            phi += b * (y >> p & y >> q & 1) as f64;
        }
        phi
    }

    #[inline]
    fn lambda_packed(&self, k: usize, packed: u64) -> f64 {
        let mut l = self.linear[self.s[k]];
        let base = k * self.chunks;
        for c in 0..self.chunks {
            l += self.lam[(base + c) * 256 + (packed >> (8 * c) & 0xff) as usize];
        }
        // Every use of λ has period 4π.
        l - FOUR_PI * (l * (1.0 / FOUR_PI)).round()
    }

    /// `λ_s(y_T)` for the `k`-th Hadamarded qubit, reduced to `[-2π, 2π]`.
    pub fn lambda(&self, k: usize, y: u64) -> f64 {
        self.lambda_packed(k, self.pack_t(y))
    }

    /// Signed magnitude and phase of `h(λ, b)`, given `sin(λ/2), cos(λ/2)`.
    #[inline]
    fn factor(lambda: f64, sh: f64, ch: f64, bit: bool) -> (f64, f64) {
        if bit {
            (sh, lambda / 2.0 - FRAC_PI_2)
        } else {
            (ch, lambda / 2.0)
        }
    }

    /// `h'/h`, or `h'` itself when `h` vanishes.
    #[inline]
    fn log_derivative(lambda: f64, sh: f64, ch: f64, bit: bool) -> Complex64 {
        match (bit, if bit { sh } else { ch } == 0.0) {
            (false, false) => Complex64::new(-sh / (2.0 * ch), 0.5),
            (true, false) => Complex64::new(ch / (2.0 * sh), 0.5),
            (false, true) => Complex64::from_polar(0.5, lambda) * Complex64::i(),
            (true, true) => -Complex64::from_polar(0.5, lambda) * Complex64::i(),
        }
    }

    /// Evaluates at `y`; when `dln` is given it receives one entry per
    /// Hadamarded qubit (see [`Self::log_derivative`]).
    #[inline]
    pub(crate) fn evaluate(&self, y: u64, mut dln: Option<&mut [Complex64]>) -> Polar {
        let packed = self.pack_t(y);
        let mut acc = Polar::new(self.norm, self.t_phase(y, packed));
        for k in 0..self.s.len() {
            let bit = y >> self.s[k] & 1 == 1;
            let lambda = self.lambda_packed(k, packed);
            let (sh, ch) = sin_cos_small(lambda / 2.0);
            let (m, ph) = Self::factor(lambda, sh, ch, bit);
            if let Some(out) = dln.as_deref_mut() {
                out[k] = Self::log_derivative(lambda, sh, ch, bit);
            }
            acc.push(k, m, ph);
        }
        acc
    }

    /// Draws `y ~ |⟨y|H_S U|+⟩|²`: `y_T` uniform, then each `y_s`
    /// independently Bernoulli(`sin²(λ_s/2)`). Returns the draw and its
    /// amplitude.
    #[inline]
    pub(crate) fn draw<R: RngCore>(&self, rng: &mut R, mut dln: Option<&mut [Complex64]>) -> (u64, Polar) {
        let mut y = 0u64;
        let mut word = rng.next_u64();
        for (i, &q) in self.t.iter().enumerate() {
            if i == 64 {
                word = rng.next_u64();
            }
            y |= (word >> (i % 64) & 1) << q;
        }
        let packed = self.pack_t(y);
        let mut acc = Polar::new(self.norm, self.t_phase(y, packed));
        for k in 0..self.s.len() {
            let lambda = self.lambda_packed(k, packed);
            let (sh, ch) = sin_cos_small(lambda / 2.0);
            let bit = rng.random::<f64>() < sh * sh;
            y |= (bit as u64) << self.s[k];
            let (m, ph) = Self::factor(lambda, sh, ch, bit);
            if let Some(out) = dln.as_deref_mut() {
                out[k] = Self::log_derivative(lambda, sh, ch, bit);
            }
            acc.push(k, m, ph);
        }
        (y, acc)
    }

    pub fn amplitude(&self, y: u64) -> Complex64 {
        self.evaluate(y, None).value()
    }

    pub fn probability(&self, y: u64) -> f64 {
        self.amplitude(y).norm_sqr()
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> u64 {
        self.draw(rng, None).0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    Alpha,
    Beta,
}

/// `|α⟩ = H_A U_1 H|0⟩` or `|β⟩ = H_B U_2† H|0⟩`.
#[derive(Clone, Debug)]
pub struct LatentState {
    pub which: Which,
    pub partition: Bipartition,
    pub poly: PhasePolynomial,
    inner: HalfHadamard,
}

impl LatentState {
    /// `poly` is the phase polynomial of `U_1`.
    pub fn alpha(poly: PhasePolynomial, partition: Bipartition) -> Result<Self> {
        let inner = HalfHadamard::new(&poly, &partition.a)?;
        Ok(LatentState { which: Which::Alpha, partition, poly, inner })
    }

    /// `poly` is the phase polynomial of `U_2` (not its conjugate).
    pub fn beta(poly: PhasePolynomial, partition: Bipartition) -> Result<Self> {
        // ⟨β|y⟩ = conj⟨y|H_B U_2†|+⟩ = ⟨y|H_B U_2|+⟩ because conj h(-μ, b) = h(μ, b).
        let inner = HalfHadamard::new(&poly, &partition.b)?;
        Ok(LatentState { which: Which::Beta, partition, poly, inner })
    }

    pub fn half_hadamard(&self) -> &HalfHadamard {
        &self.inner
    }
}

/// `⟨y|α⟩`
pub fn alpha_amplitude(ls: &LatentState, y: u64) -> Complex64 {
    assert_eq!(ls.which, Which::Alpha);
    ls.inner.amplitude(y)
}

/// `⟨β|y⟩`
pub fn beta_amplitude(ls: &LatentState, y: u64) -> Complex64 {
    assert_eq!(ls.which, Which::Beta);
    ls.inner.amplitude(y)
}

/// `m` exact draws from `P(y) = |⟨y|α⟩|²`.
pub fn sample_p(ls: &LatentState, m: usize, seed: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(m);
    for (k, len) in rng::chunks(m) {
        let mut r = rng::chunk_stream(seed, "sample-p", k);
        out.extend((0..len).map(|_| ls.inner.sample(&mut r)));
    }
    out
}
