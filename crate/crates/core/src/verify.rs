//! Cross-module self-check: every exact identity and estimator contract is
//! re-run on fresh random circuits, with the worst observed error and its
//! tolerance reported per check.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{bind, build_family, BoundCircuit, BoundGate, Circuit, CircuitFamily, FamilyOptions};
use crate::error::Result;
use crate::forrelation::{estimate_p_bitstring, estimate_p_zero, grad_p, ForrelationProblem};
use crate::rng;
use crate::statevector::{
    dqgm_sampling_distribution, dqgm_training_probability, feature_register, parameter_shift_grad, sampling_index,
    simulate, StateVector,
};
use crate::tn::{circuit_to_network, contract, greedy_plan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Standard,
    Extended,
}

impl Level {
    pub fn sizes(self) -> Vec<usize> {
        match self {
            Level::Quick => vec![4, 6, 8],
            Level::Standard => vec![4, 6, 8, 10, 12],
            Level::Extended => vec![4, 6, 8, 10, 12, 14, 16],
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quick" => Ok(Level::Quick),
            "standard" => Ok(Level::Standard),
            "extended" => Ok(Level::Extended),
            _ => Err(format!("unknown level {s:?} (quick, standard, extended)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub n: usize,
    /// Worst error observed; for statistical checks the worst |z| or the
    /// fraction of components beyond 5σ.
    pub value: f64,
    pub tolerance: f64,
    /// `tolerance − value`; negative on failure.
    pub margin: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub level: Level,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Deliberate convention faults, for showing that the checks can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tamper {
    /// Flip the sign of every `Rz` angle on the statevector side.
    pub rz_sign: bool,
}

const CIRCUITS_PER_SIZE: usize = 3;

fn check(name: &'static str, n: usize, value: f64, tolerance: f64) -> Check {
    Check { name, n, value, tolerance, margin: tolerance - value, passed: value <= tolerance }
}

fn random_circuit<R: Rng>(n: usize, features: usize, rng: &mut R) -> Result<(Circuit, Vec<f64>)> {
    let c = build_family(CircuitFamily::ExtendedIqp, n, &FamilyOptions::default().with_features(features))?;
    let theta = (0..c.param_count()).map(|_| rng.random_range(-PI..PI)).collect();
    Ok((c, theta))
}

fn oracle_state(c: &BoundCircuit, tamper: Tamper) -> Result<StateVector> {
    if !tamper.rz_sign {
        return simulate(c);
    }
    let mut flipped = c.clone();
    for g in &mut flipped.gates {
        if let BoundGate::Rz { angle, .. } = g {
            *angle = -*angle;
        }
    }
    simulate(&flipped)
}

/// `Φ = Σ_y P(y) R(y)` by enumerating every `y` with `P(y) > 0`.
fn exact_forrelation(problem: &ForrelationProblem) -> Result<Complex64> {
    let mut phi = Complex64::new(0.0, 0.0);
    for y in 0..1u64 << problem.n() {
        let p = problem.probability(y);
        if p > 0.0 {
            phi += problem.ratio(y)? * p;
        }
    }
    Ok(phi)
}

fn checks_at(n: usize, seed: u64, tamper: Tamper) -> Result<Vec<Check>> {
    let mut rng = rng::stream(seed, &format!("verify {n}"));
    let mut worst = [0.0f64; 8];
    let (mut components, mut outliers) = (0usize, 0usize);
    for trial in 0..CIRCUITS_PER_SIZE {
        let s = rng::sub_seed(seed, &format!("verify {n} {trial}"));
        let (c, theta) = random_circuit(n, 0, &mut rng)?;
        let bound = bind(&c, &theta, None)?;
        let state = oracle_state(&bound, tamper)?;
        worst[0] = worst[0].max((state.norm_sqr() - 1.0).abs());

        let problem = ForrelationProblem::new(&c, &theta, None)?;
        worst[1] = worst[1].max((exact_forrelation(&problem)? - state.amplitude(0)).norm());

        let est = estimate_p_zero(&c, &theta, None, 100_000, s)?;
        worst[2] = worst[2].max((est.mean - state.probability(0)).abs() / est.stderr.max(1e-300));

        let zero = estimate_p_bitstring(&c, &theta, None, 0, 100_000, s)?;
        worst[3] = worst[3].max(if zero == est { 0.0 } else { 1.0 });

        let x_out = rng.random_range(0..1u64 << n);
        let other = estimate_p_bitstring(&c, &theta, None, x_out, 100_000, s)?;
        worst[4] = worst[4].max((other.mean - state.probability(x_out)).abs() / other.stderr.max(1e-300));

        if n <= 8 {
            let net = circuit_to_network(&bound, true);
            let amp = contract(&net, &greedy_plan(&net))?.data[0];
            worst[5] = worst[5].max((amp - state.amplitude(0)).norm());

            let k = n.min(3);
            let (c, theta) = random_circuit(n, k, &mut rng)?;
            let table = dqgm_sampling_distribution(&c, &theta)?;
            let reg = feature_register(&c)?;
            for x in 0..1u64 << k {
                let p = dqgm_training_probability(&c, &theta, x as f64)?;
                worst[6] = worst[6].max((table.probs()[sampling_index(&reg, x) as usize] - p).abs());
            }
        }
        if n <= 6 {
            let shift = parameter_shift_grad(&c, &theta, None, 0)?;
            let mc = grad_p(&c, &theta, None, 1_000_000, s)?;
            for (j, d) in mc.dp.iter().enumerate() {
                components += 1;
                if (d.mean - shift[j]).abs() > 5.0 * d.stderr {
                    outliers += 1;
                }
            }
        }
    }
    worst[7] = if components > 0 { outliers as f64 / components as f64 } else { 0.0 };
    let mut out = vec![
        check("normalization", n, worst[0], 1e-9),
        check("amplitude_exactness", n, worst[1], 1e-10),
        check("estimate_p_zero_z", n, worst[2], 5.0),
        check("z_absorption_bitwise", n, worst[3], 0.0),
        check("estimate_p_bitstring_z", n, worst[4], 5.0),
    ];
    if n <= 8 {
        out.push(check("tensor_network_amplitude", n, worst[5], 1e-9));
        out.push(check("dqgm_duality", n, worst[6], 1e-9));
    }
    if n <= 6 {
        out.push(check("gradient_beyond_5_sigma_fraction", n, worst[7], 0.01));
    }
    Ok(out)
}

pub fn run(level: Level, seed: u64, tamper: Tamper) -> Result<VerifyReport> {
    let mut checks = vec![];
    for n in level.sizes() {
        checks.extend(checks_at(n, seed, tamper)?);
    }
    Ok(VerifyReport { level, seed, passed: checks.iter().all(|c| c.passed), checks })
}
