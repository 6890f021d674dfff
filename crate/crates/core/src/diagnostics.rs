//! Sampling-hardness indicators computed from output distributions:
//! anti-concentration, distance to Porter-Thomas, cross-entropy difference
//! and t-sparseness, plus ensemble statistics over random instances.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{random_ensemble_instance, BoundCircuit, CircuitFamily};
use crate::error::{Error, Result};
use crate::forrelation::estimate_p_bitstring;
use crate::rng;
use crate::statevector::{simulate_with_cap, ProbabilityTable, DEFAULT_QUBIT_CAP};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
pub const DEFAULT_TV_BINS: usize = 50;

/// Fraction of outcomes with `p(x) ≥ α / 2^n`.
pub fn anti_concentration_fraction(probs: &ProbabilityTable, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold multiplier {alpha} must be positive")));
    }
    let p = probs.probs();
    let threshold = alpha / p.len() as f64;
    Ok(p.iter().filter(|&&x| x >= threshold).count() as f64 / p.len() as f64)
}

/// Lower edges of the `bins` equal-mass Porter-Thomas bins for `N = 2^n`.
pub fn porter_thomas_edges(n: usize, bins: usize) -> Vec<f64> {
    let big_n = (1u64 << n) as f64;
    (0..bins).map(|i| -(-(i as f64) / bins as f64).ln_1p() / big_n).collect()
}

/// Total-variation distance between the binned histogram of the table's
/// probabilities and the Porter-Thomas law, over `bins` equal-mass bins.
pub fn porter_thomas_tv(probs: &ProbabilityTable, bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let edges = porter_thomas_edges(probs.n(), bins);
    let mut counts = vec![0u64; bins];
    for &p in probs.probs() {
        counts[edges.partition_point(|&e| e <= p) - 1] += 1;
    }
    let total = probs.probs().len() as f64;
    let target = 1.0 / bins as f64;
    Ok(counts.iter().map(|&c| (c as f64 / total - target).abs()).sum::<f64>() / 2.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XebEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Cross-entropy difference `ΔH = log N + γ − mean log(1/p(x_j))` over the
/// given samples. Evaluated as `γ + mean log(N p(x_j))` so that a uniform
/// `prob_fn` returns `γ` exactly.
pub fn xeb_delta_h(n: usize, samples: &[u64], prob_fn: impl Fn(u64) -> Result<f64>) -> Result<XebEstimate> {
    if samples.is_empty() {
        return Err(Error::Empty("cross-entropy samples"));
    }
    let big_n = (1u64 << n) as f64;
    let mut logs = Vec::with_capacity(samples.len());
    for &x in samples {
        let p = prob_fn(x)?;
        if !(p > 0.0) {
            return Err(Error::DegenerateSample(x));
        }
        logs.push((big_n * p).ln());
    }
    let m = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / m;
    let var = if logs.len() > 1 {
        logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(XebEstimate { value: EULER_GAMMA + mean, stderr: (var / m).sqrt(), samples: logs.len() })
}

/// `eps` values log-spaced over `[lo, hi]`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            let mut v: Vec<f64> = (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect();
            v[0] = lo;
            v[count - 1] = hi;
            v
        }
    }
}

/// Twenty points from `1e-3` to `0.5`.
pub fn default_eps_grid() -> Vec<f64> {
    log_spaced(1e-3, 0.5, 20)
}

/// For each `ε`, the smallest `t` such that dropping all but the `t` largest
/// probabilities removes at most `ε` mass, reported as `(1/ε, 1 − t/N)`.
pub fn t_sparse_curve(probs: &ProbabilityTable, eps: &[f64]) -> Result<Vec<(f64, f64)>> {
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::InvalidArgument(format!("ε = {e} is outside (0, 1)")));
    }
    let mut sorted = probs.probs().to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    // tail[t] = mass of everything after the t largest, summed small to large.
    let big_n = sorted.len();
    let mut tail = vec![0.0; big_n + 1];
    for t in (0..big_n).rev() {
        tail[t] = tail[t + 1] + sorted[t];
    }
    Ok(eps
        .iter()
        .map(|&e| {
            let t = tail.partition_point(|&mass| mass > e);
            (1.0 / e, 1.0 - t as f64 / big_n as f64)
        })
        .collect())
}

/// Second differences of `log f` against `log(1/ε)` at interior points.
/// The grid need not be uniform; each value is a divided difference.
pub fn log_log_second_differences(curve: &[(f64, f64)]) -> Vec<f64> {
    let pts: Vec<(f64, f64)> = curve.iter().map(|&(x, f)| (x.ln(), f.ln())).collect();
    pts.windows(3)
        .map(|w| {
            let s1 = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            let s2 = (w[2].1 - w[1].1) / (w[2].0 - w[1].0);
            (s2 - s1) / ((w[2].0 - w[0].0) / 2.0)
        })
        .collect()
}

/// A synthetic table of i.i.d. `Exp(1)/N` draws, optionally normalised.
pub fn porter_thomas_table<R: Rng + ?Sized>(n: usize, rng: &mut R, renormalize: bool) -> ProbabilityTable {
    let big_n = 1usize << n;
    let mut p: Vec<f64> = (0..big_n).map(|_| -(1.0 - rng.random::<f64>()).ln() / big_n as f64).collect();
    if renormalize {
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
    }
    ProbabilityTable::unnormalized(n, p).expect("exponential draws are finite and non-negative")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_eps_grid")]
    pub eps: Vec<f64>,
    /// Oracle shots per instance for the cross-entropy difference.
    #[serde(default = "default_xeb_samples")]
    pub xeb_samples: usize,
    /// Monte-Carlo samples per probability when the oracle is out of reach.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
}

fn default_alpha() -> f64 {
    1.0
}
fn default_bins() -> usize {
    DEFAULT_TV_BINS
}
fn default_xeb_samples() -> usize {
    1000
}
fn default_mc_samples() -> usize {
    100_000
}
fn default_cap() -> usize {
    DEFAULT_QUBIT_CAP
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            alpha: default_alpha(),
            bins: default_bins(),
            eps: default_eps_grid(),
            xeb_samples: default_xeb_samples(),
            mc_samples: default_mc_samples(),
            cap: default_cap(),
        }
    }
}

/// Diagnostics of one instance. Table-based fields are `None` when the
/// instance was beyond the oracle cap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialDiagnostics {
    pub family: CircuitFamily,
    pub n: usize,
    pub trial: usize,
    pub anti_concentration: Option<f64>,
    pub tv_porter_thomas: Option<f64>,
    /// TV at half and at double the bin count, to show binning sensitivity.
    pub tv_half_bins: Option<f64>,
    pub tv_double_bins: Option<f64>,
    pub delta_h: XebEstimate,
    pub tsparse: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub family: CircuitFamily,
    pub n: usize,
    pub trials: usize,
    pub anti_concentration: Option<MeanStd>,
    pub tv_porter_thomas: Option<MeanStd>,
    /// Mean over instances, with the propagated standard error.
    pub delta_h: XebEstimate,
    /// Mean `f` over instances at each `1/ε`.
    pub tsparse_curve: Vec<(f64, f64)>,
    pub rows: Vec<TrialDiagnostics>,
}

/// Externally supplied samples for instances beyond the oracle cap, keyed by
/// `(n, trial)`.
pub type ExternalSamples = BTreeMap<(usize, usize), Vec<u64>>;

/// The instance used for `trial` of `(family, n)` under `seed`.
pub fn ensemble_instance(family: CircuitFamily, n: usize, trial: usize, seed: u64) -> Result<BoundCircuit> {
    let mut r = rng::stream(seed, &format!("ensemble {family} {n} {trial}"));
    random_ensemble_instance(family, n, &mut r)
}

/// Cross-entropy difference of `samples` against Monte-Carlo probability
/// estimates of `c`.
pub fn xeb_from_estimates(c: &BoundCircuit, samples: &[u64], m: usize, seed: u64) -> Result<XebEstimate> {
    let circuit = c.to_circuit();
    xeb_delta_h(c.n, samples, |x| {
        let s = rng::sub_seed(seed, &format!("xeb {x}"));
        Ok(estimate_p_bitstring(&circuit, &[], None, x, m, s)?.mean)
    })
}

pub fn diagnose_instance(
    family: CircuitFamily,
    n: usize,
    trial: usize,
    seed: u64,
    cfg: &StudyConfig,
    external: Option<&ExternalSamples>,
) -> Result<TrialDiagnostics> {
    let c = ensemble_instance(family, n, trial, seed)?;
    let label = format!("xeb {family} {n} {trial}");
    if n > cfg.cap {
        let samples = external
            .and_then(|e| e.get(&(n, trial)))
            .ok_or(Error::CapacityExceeded { n, cap: cfg.cap })?;
        let delta_h = xeb_from_estimates(&c, samples, cfg.mc_samples, rng::sub_seed(seed, &label))?;
        return Ok(TrialDiagnostics {
            family,
            n,
            trial,
            anti_concentration: None,
            tv_porter_thomas: None,
            tv_half_bins: None,
            tv_double_bins: None,
            delta_h,
            tsparse: vec![],
        });
    }
    let table = simulate_with_cap(&c, cfg.cap)?.full_distribution();
    let shots = table.sample(cfg.xeb_samples as u64, &mut rng::stream(seed, &label));
    let samples: Vec<u64> = shots
        .counts
        .iter()
        .flat_map(|(&x, &k)| std::iter::repeat_n(x, k as usize))
        .collect();
    let delta_h = xeb_delta_h(n, &samples, |x| Ok(table.probs()[x as usize]))?;
    Ok(TrialDiagnostics {
        family,
        n,
        trial,
        anti_concentration: Some(anti_concentration_fraction(&table, cfg.alpha)?),
        tv_porter_thomas: Some(porter_thomas_tv(&table, cfg.bins)?),
        tv_half_bins: Some(porter_thomas_tv(&table, (cfg.bins / 2).max(2))?),
        tv_double_bins: Some(porter_thomas_tv(&table, cfg.bins * 2)?),
        delta_h,
        tsparse: t_sparse_curve(&table, &cfg.eps)?,
    })
}

/// Runs `trials` random instances of `family` at each `n` and aggregates
/// their diagnostics. Instances run in parallel; results do not depend on
/// the worker count.
pub fn ensemble_study(
    family: CircuitFamily,
    ns: &[usize],
    trials: usize,
    seed: u64,
    cfg: &StudyConfig,
    external: Option<&ExternalSamples>,
) -> Result<Vec<DiagnosticsReport>> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("ensemble needs at least 2 trials, got {trials}")));
    }
    ns.iter()
        .map(|&n| {
            let rows = (0..trials)
                .into_par_iter()
                .map(|t| diagnose_instance(family, n, t, seed, cfg, external))
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(family, n, rows))
        })
        .collect()
}

/// Aggregates per-instance rows of one `(family, n)` cell.
pub fn summarize(family: CircuitFamily, n: usize, rows: Vec<TrialDiagnostics>) -> DiagnosticsReport {
    let k = rows.len() as f64;
    let ac: Vec<f64> = rows.iter().filter_map(|r| r.anti_concentration).collect();
    let tv: Vec<f64> = rows.iter().filter_map(|r| r.tv_porter_thomas).collect();
    let delta_h = XebEstimate {
        value: rows.iter().map(|r| r.delta_h.value).sum::<f64>() / k,
        stderr: rows.iter().map(|r| r.delta_h.stderr.powi(2)).sum::<f64>().sqrt() / k,
        samples: rows.iter().map(|r| r.delta_h.samples).sum(),
    };
    let with_curve: Vec<&TrialDiagnostics> = rows.iter().filter(|r| !r.tsparse.is_empty()).collect();
    let tsparse_curve = match with_curve.first() {
        None => vec![],
        Some(first) => (0..first.tsparse.len())
            .map(|i| {
                let f = with_curve.iter().map(|r| r.tsparse[i].1).sum::<f64>() / with_curve.len() as f64;
                (first.tsparse[i].0, f)
            })
            .collect(),
    };
    DiagnosticsReport {
        family,
        n,
        trials: rows.len(),
        anti_concentration: MeanStd::of(&ac),
        tv_porter_thomas: MeanStd::of(&tv),
        delta_h,
        tsparse_curve,
        rows,
    }
}
