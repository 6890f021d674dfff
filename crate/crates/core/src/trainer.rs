//! Training loops for the DQGM (probabilities on a feature-map grid) and
//! QCBM (output bitstring probabilities) objectives.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{bind, AngleRef, Circuit, Gate};
use crate::error::{Error, Result};
use crate::forrelation::ForrelationProblem;
use crate::rng;
use crate::statevector::{
    distribution_and_grad, dqgm_probabilities_and_grad, dqgm_training_probabilities, feature_register, simulate,
};

/// Evenly spaced grid `start, start + step, …` with `count` points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn integers(count: usize) -> Self {
        GridSpec { start: 0.0, step: 1.0, count }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|k| self.start + self.step * k as f64).collect()
    }
}

/// Target probabilities on a grid of spacing `spacing`. Tables are
/// normalised as densities, `Σ p·spacing = 1`, so a coarser grid carries
/// proportionally larger values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    pub grid: Vec<f64>,
    pub spacing: f64,
    pub probs: Vec<f64>,
}

impl TargetDistribution {
    pub fn new(grid: Vec<f64>, spacing: f64, probs: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Empty("target grid"));
        }
        if grid.len() != probs.len() {
            return Err(Error::GridMismatch(format!("{} points, {} probabilities", grid.len(), probs.len())));
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidArgument(format!("grid spacing {spacing}")));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidArgument("negative or NaN target probability".into()));
        }
        let mass: f64 = probs.iter().sum::<f64>() * spacing;
        if mass > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!("target mass {mass} exceeds one")));
        }
        Ok(TargetDistribution { grid, spacing, probs })
    }

    /// Every bitstring of an `n`-qubit register with the given probabilities.
    pub fn bitstrings(n: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 1 << n {
            return Err(Error::GridMismatch(format!("{} probabilities for {n} qubits", probs.len())));
        }
        Self::new((0..1u64 << n).map(|x| x as f64).collect(), 1.0, probs)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Discretised Gaussian density on an evenly spaced grid.
pub fn gaussian_target(grid: &GridSpec, mean: f64, std: f64) -> Result<TargetDistribution> {
    if grid.count == 0 {
        return Err(Error::Empty("target grid"));
    }
    if !(std > 0.0) {
        return Err(Error::InvalidArgument(format!("standard deviation {std}")));
    }
    let points = grid.points();
    let raw: Vec<f64> = points.iter().map(|x| (-0.5 * ((x - mean) / std).powi(2)).exp()).collect();
    let z = raw.iter().sum::<f64>() * grid.step;
    TargetDistribution::new(points, grid.step, raw.into_iter().map(|p| p / z).collect())
}

pub fn mse_loss(p_model: &[f64], target: &TargetDistribution) -> Result<f64> {
    if p_model.len() != target.len() {
        return Err(Error::GridMismatch(format!("{} model values for {} grid points", p_model.len(), target.len())));
    }
    Ok(p_model.iter().zip(&target.probs).map(|(p, t)| (p - t).powi(2)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    /// Equal-weight mixture of Gaussians `exp(-(x-y)²/(2σ²))`, one per
    /// listed variance `σ²`.
    GaussianMixture { variances: Vec<f64> },
    Constant,
}

impl Default for Kernel {
    fn default() -> Self {
        Kernel::GaussianMixture { variances: vec![0.25, 4.0, 64.0] }
    }
}

impl Kernel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Kernel::Constant => 1.0,
            Kernel::GaussianMixture { variances } => {
                let d2 = (x - y).powi(2);
                variances.iter().map(|s| (-d2 / (2.0 * s)).exp()).sum::<f64>() / variances.len() as f64
            }
        }
    }

    fn gram(&self, grid: &[f64]) -> Vec<Vec<f64>> {
        grid.iter().map(|&x| grid.iter().map(|&y| self.eval(x, y)).collect()).collect()
    }
}

fn check_samples(xs: &[f64], what: &'static str) -> Result<()> {
    match xs.len() {
        0 => Err(Error::Empty(what)),
        1 => Err(Error::InvalidArgument(format!("{what}: the U-statistic needs at least two samples"))),
        _ => Ok(()),
    }
}

/// Unbiased U-statistic estimate of the maximum mean discrepancy between
/// two sample sets.
pub fn mmd_loss(model: &[f64], target: &[f64], kernel: &Kernel) -> Result<f64> {
    check_samples(model, "model samples")?;
    check_samples(target, "target samples")?;
    let within = |s: &[f64]| {
        let mut acc = 0.0;
        for (i, &a) in s.iter().enumerate() {
            for (j, &b) in s.iter().enumerate() {
                if i != j {
                    acc += kernel.eval(a, b);
                }
            }
        }
        acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &a in model {
        for &b in target {
            cross += kernel.eval(a, b);
        }
    }
    cross /= (model.len() * target.len()) as f64;
    Ok(within(model) - 2.0 * cross + within(target))
}

/// Biased V-statistic of the same discrepancy; zero for identical sets.
pub fn mmd_v_statistic(model: &[f64], target: &[f64], kernel: &Kernel) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::Empty("model samples"));
    }
    if target.is_empty() {
        return Err(Error::Empty("target samples"));
    }
    let mean = |a: &[f64], b: &[f64]| {
        a.iter().map(|&x| b.iter().map(|&y| kernel.eval(x, y)).sum::<f64>()).sum::<f64>() / (a.len() * b.len()) as f64
    };
    Ok(mean(model, model) - 2.0 * mean(model, target) + mean(target, target))
}

/// The discrepancy between two tables on a shared grid, `dᵀKd` with
/// `d = p − t`.
pub fn mmd_table_loss(p_model: &[f64], target: &TargetDistribution, kernel: &Kernel) -> Result<f64> {
    if p_model.len() != target.len() {
        return Err(Error::GridMismatch(format!("{} model values for {} grid points", p_model.len(), target.len())));
    }
    let d: Vec<f64> = p_model.iter().zip(&target.probs).map(|(p, t)| p - t).collect();
    let k = kernel.gram(&target.grid);
    Ok(quadratic(&k, &d))
}

fn quadratic(k: &[Vec<f64>], d: &[f64]) -> f64 {
    k.iter().zip(d).map(|(row, di)| di * row.iter().zip(d).map(|(a, b)| a * b).sum::<f64>()).sum()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Loss {
    #[default]
    Mse,
    Mmd {
        #[serde(default)]
        kernel: Kernel,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    /// Exact statevector probabilities and parameter-shift gradients.
    #[default]
    Oracle,
    /// Forrelation Monte Carlo with `samples` draws per grid point per step.
    Forrelation { samples: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplies the step size after every update.
    pub lr_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8, lr_decay: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian { mean: f64, std: f64 },
    /// Explicit probabilities, one per grid point.
    Table { probs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub loss: Loss,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub target: TargetSpec,
    /// Qubits `0..n_active` are trained from small random angles; the rest
    /// start as identity lines. `None` means every qubit is active.
    #[serde(default)]
    pub n_active: Option<usize>,
    /// Keep parameters that touch padded qubits at their initial values.
    #[serde(default = "default_true")]
    pub freeze_padding: bool,
}

impl TrainConfig {
    pub fn target_distribution(&self) -> Result<TargetDistribution> {
        match &self.target {
            TargetSpec::Gaussian { mean, std } => gaussian_target(&self.grid, *mean, *std),
            TargetSpec::Table { probs } => TargetDistribution::new(self.grid.points(), self.grid.step, probs.clone()),
        }
    }

    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }
}

fn default_true() -> bool {
    true
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn touches_padding(g: &Gate, n_active: usize) -> bool {
    match *g {
        Gate::Rz { qubit, .. } => qubit >= n_active,
        Gate::Rzz { qubits: (p, q), .. } => p >= n_active || q >= n_active,
        Gate::HadamardLayer => false,
    }
}

/// Initial parameters that make qubits `n_active..n` an identity: their
/// couplings are zero and both single-qubit angles on each padded line are
/// `π/2`, so `H Rz(π/2) H Rz(π/2) H |0⟩ = |0⟩` up to phase. Active
/// parameters are drawn from `U[-0.1, 0.1]`.
pub fn identity_padding_init<R: Rng + ?Sized>(c: &Circuit, n_active: usize, rng: &mut R) -> Result<Vec<f64>> {
    let n = c.n();
    if n_active > n {
        return Err(Error::InvalidArgument(format!("{n_active} active qubits on a {n}-qubit circuit")));
    }
    if n_active < n {
        c.extended_iqp_blocks()?;
        if c.feature_slots().iter().any(|&(q, _)| q >= n_active) {
            return Err(Error::InvalidArgument("feature rotations on padded qubits".into()));
        }
    }
    let mut theta = vec![0.0; c.param_count()];
    for g in c.gates() {
        let Some(AngleRef::Param(j)) = g.angle() else { continue };
        theta[j] = if !touches_padding(g, n_active) {
            rng.random_range(-0.1..=0.1)
        } else if matches!(g, Gate::Rz { .. }) {
            std::f64::consts::FRAC_PI_2
        } else {
            0.0
        };
    }
    Ok(theta)
}

/// Parameters updated during training: all of them, or with
/// `freeze_padding` only those acting on qubits `0..n_active`.
pub fn trainable_params(c: &Circuit, config: &TrainConfig) -> Vec<usize> {
    let n_active = config.n_active.unwrap_or(c.n());
    let mut keep: Vec<usize> = c
        .gates()
        .iter()
        .filter(|g| !(config.freeze_padding && touches_padding(g, n_active)))
        .filter_map(|g| match g.angle() {
            Some(AngleRef::Param(j)) => Some(j),
            _ => None,
        })
        .collect();
    keep.sort_unstable();
    keep.dedup();
    keep
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dqgm,
    Qcbm,
}

/// Model probabilities on the target grid with their gradients, and the
/// resulting loss.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub probs: Vec<f64>,
    pub prob_stderr: Option<Vec<f64>>,
    pub loss: f64,
    pub grad: Vec<f64>,
    /// First-order error propagation from the per-point standard errors
    /// (Monte-Carlo backend only).
    pub grad_stderr: Option<Vec<f64>>,
}

struct PointEstimates {
    p: Vec<f64>,
    dp: Vec<Vec<f64>>,
    p_se: Option<Vec<f64>>,
    dp_se: Option<Vec<Vec<f64>>>,
}

/// Gradients come back full length, zero outside `params`.
fn estimate_points(
    task: Task,
    c: &Circuit,
    theta: &[f64],
    target: &TargetDistribution,
    backend: Backend,
    params: &[usize],
    seed: u64,
) -> Result<PointEstimates> {
    match (backend, task) {
        (Backend::Oracle, _) => {
            let (p, mut dp) = match task {
                Task::Dqgm => dqgm_probabilities_and_grad(c, theta, &target.grid)?,
                Task::Qcbm => {
                    let (table, jac) = distribution_and_grad(c, theta)?;
                    let idx = bitstring_indices(c, target)?;
                    (
                        idx.iter().map(|&x| table[x as usize]).collect(),
                        idx.iter().map(|&x| jac[x as usize].clone()).collect(),
                    )
                }
            };
            if params.len() < c.param_count() {
                let mut mask = vec![0.0; c.param_count()];
                params.iter().for_each(|&j| mask[j] = 1.0);
                dp.iter_mut().for_each(|row| row.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m));
            }
            Ok(PointEstimates { p, dp, p_se: None, dp_se: None })
        }
        (Backend::Forrelation { samples }, _) => {
            let base = match task {
                Task::Dqgm => None,
                Task::Qcbm => Some(ForrelationProblem::new(c, theta, None)?.with_gradient_params(params)?),
            };
            let xs: Vec<u64> = match task {
                Task::Dqgm => vec![0; target.len()],
                Task::Qcbm => bitstring_indices(c, target)?,
            };
            let results: Vec<_> = target
                .grid
                .par_iter()
                .zip(xs)
                .enumerate()
                .map(|(i, (&x, x_out))| {
                    let problem = match &base {
                        None => ForrelationProblem::new(c, theta, Some(x))?.with_gradient_params(params)?,
                        Some(b) => b.with_output(x_out)?,
                    };
                    problem.probability_gradient(samples, rng::sub_seed(seed, &format!("point {i}")))
                })
                .collect::<Result<_>>()?;
            let np = c.param_count();
            let mut out = PointEstimates { p: vec![], dp: vec![], p_se: Some(vec![]), dp_se: Some(vec![]) };
            for r in results {
                let (mut dp, mut se) = (vec![0.0; np], vec![0.0; np]);
                for (&j, d) in params.iter().zip(&r.dp) {
                    dp[j] = d.mean;
                    se[j] = d.stderr;
                }
                out.p.push(r.p.mean);
                out.p_se.as_mut().unwrap().push(r.p.stderr);
                out.dp.push(dp);
                out.dp_se.as_mut().unwrap().push(se);
            }
            Ok(out)
        }
    }
}

fn bitstring_indices(c: &Circuit, target: &TargetDistribution) -> Result<Vec<u64>> {
    let top = (1u128 << c.n()) as f64;
    target
        .grid
        .iter()
        .map(|&x| {
            if x.fract() != 0.0 || x < 0.0 || x >= top {
                Err(Error::GridMismatch(format!("{x} is not a bitstring of {} qubits", c.n())))
            } else {
                Ok(x as u64)
            }
        })
        .collect()
}

/// Loss and gradient at `theta` with respect to `params` (other components
/// are zero). The Monte-Carlo backend draws one sample set per grid point,
/// keyed by `seed`, and reuses it for every parameter.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradient(
    task: Task,
    c: &Circuit,
    theta: &[f64],
    target: &TargetDistribution,
    loss: &Loss,
    backend: Backend,
    params: &[usize],
    seed: u64,
) -> Result<Evaluation> {
    let pts = estimate_points(task, c, theta, target, backend, params, seed)?;
    let np = c.param_count();
    let d: Vec<f64> = pts.p.iter().zip(&target.probs).map(|(p, t)| p - t).collect();
    // Loss = Σ d K d with K the identity for MSE; w = K d.
    let (value, w, gram) = match loss {
        Loss::Mse => (d.iter().map(|v| v * v).sum(), d.clone(), None),
        Loss::Mmd { kernel } => {
            let k = kernel.gram(&target.grid);
            let w = k.iter().map(|row| row.iter().zip(&d).map(|(a, b)| a * b).sum()).collect();
            (quadratic(&k, &d), w, Some(k))
        }
    };
    let mut grad = vec![0.0; np];
    for (wi, dpi) in w.iter().zip(&pts.dp) {
        for (g, v) in grad.iter_mut().zip(dpi) {
            *g += 2.0 * wi * v;
        }
    }
    let grad_stderr = match (&pts.p_se, &pts.dp_se) {
        (Some(p_se), Some(dp_se)) => {
            let mut var = vec![0.0; np];
            for (i, (wi, se_i)) in w.iter().zip(dp_se).enumerate() {
                for j in 0..np {
                    var[j] += (2.0 * wi * se_i[j]).powi(2);
                    // Sensitivity of g_j to p_i through w.
                    let sens = match &gram {
                        None => 2.0 * pts.dp[i][j],
                        Some(k) => 2.0 * (0..pts.p.len()).map(|l| k[l][i] * pts.dp[l][j]).sum::<f64>(),
                    };
                    var[j] += (sens * p_se[i]).powi(2);
                }
            }
            Some(var.into_iter().map(f64::sqrt).collect())
        }
        _ => None,
    };
    Ok(Evaluation { probs: pts.p, prob_stderr: pts.p_se, loss: value, grad, grad_stderr })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    #[serde(with = "decimal")]
    pub m: Vec<f64>,
    #[serde(with = "decimal")]
    pub v: Vec<f64>,
}

impl AdamState {
    fn new(k: usize) -> Self {
        AdamState { t: 0, m: vec![0.0; k], v: vec![0.0; k] }
    }

    fn update(&mut self, cfg: &AdamConfig, theta: &mut [f64], grad: &[f64]) {
        let lr = cfg.lr * cfg.lr_decay.powi(self.t as i32);
        self.t += 1;
        let (b1t, b2t) = (1.0 - cfg.beta1.powi(self.t as i32), 1.0 - cfg.beta2.powi(self.t as i32));
        for j in 0..theta.len() {
            self.m[j] = cfg.beta1 * self.m[j] + (1.0 - cfg.beta1) * grad[j];
            self.v[j] = cfg.beta2 * self.v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
            theta[j] -= lr * (self.m[j] / b1t) / ((self.v[j] / b2t).sqrt() + cfg.eps);
        }
    }
}

/// Floats as shortest round-trip decimal strings.
mod decimal {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| s.parse().map_err(D::Error::custom))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub task: Task,
    pub circuit: Circuit,
    pub config: TrainConfig,
    pub target: TargetDistribution,
    #[serde(with = "decimal")]
    pub theta: Vec<f64>,
    /// Completed optimiser steps.
    pub step: usize,
    /// Loss at the initial parameters followed by one entry per step.
    pub loss_history: Vec<f64>,
    pub config_digest: String,
    /// Digest of the stream key the next evaluation will use.
    pub rng_digest: String,
    pub adam: AdamState,
}

impl Checkpoint {
    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.loss_history.len() != ck.step + 1 {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} losses after {} steps",
                ck.loss_history.len(),
                ck.step
            )));
        }
        if ck.theta.len() != ck.circuit.param_count() {
            return Err(Error::ParamLength { expected: ck.circuit.param_count(), got: ck.theta.len() });
        }
        if ck.config.digest() != ck.config_digest {
            return Err(Error::InvalidArgument("checkpoint config digest does not match its config".into()));
        }
        Ok(ck)
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

fn eval_label(step: usize) -> String {
    format!("eval {step}")
}

pub struct Trainer {
    ck: Checkpoint,
    grad: Vec<f64>,
    last: Evaluation,
}

impl Trainer {
    pub fn dqgm(circuit: &Circuit, config: &TrainConfig) -> Result<Self> {
        let target = config.target_distribution()?;
        let k = feature_register(circuit)?.len();
        if k == 0 {
            return Err(Error::InvalidCircuit("DQGM training needs feature rotations".into()));
        }
        let top = 2f64.powi(k as i32);
        if let Some(x) = target.grid.iter().find(|&&x| !(0.0..top).contains(&x)) {
            return Err(Error::GridMismatch(format!("grid point {x} lies outside [0, {top})")));
        }
        Self::start(Task::Dqgm, circuit, config, target)
    }

    pub fn qcbm(circuit: &Circuit, config: &TrainConfig, target: &TargetDistribution) -> Result<Self> {
        if circuit.has_features() {
            return Err(Error::InvalidCircuit("QCBM circuits take no feature input".into()));
        }
        if matches!(config.backend, Backend::Forrelation { .. }) {
            circuit.extended_iqp_blocks()?;
        }
        bitstring_indices(circuit, target)?;
        Self::start(Task::Qcbm, circuit, config, target.clone())
    }

    fn start(task: Task, circuit: &Circuit, config: &TrainConfig, target: TargetDistribution) -> Result<Self> {
        let n_active = config.n_active.unwrap_or(circuit.n());
        let theta = identity_padding_init(circuit, n_active, &mut rng::stream(config.seed, "init"))?;
        let ck = Checkpoint {
            task,
            circuit: circuit.clone(),
            config: config.clone(),
            target,
            adam: AdamState::new(theta.len()),
            theta,
            step: 0,
            loss_history: vec![],
            config_digest: config.digest(),
            rng_digest: String::new(),
        };
        let last = Self::evaluate_at(&ck)?;
        let mut t = Trainer { grad: last.grad.clone(), ck, last };
        t.ck.loss_history.push(t.last.loss);
        t.ck.rng_digest = t.next_digest();
        Ok(t)
    }

    /// Continues from a checkpoint; the evaluation at its parameters is
    /// repeated with the same stream so the run is bitwise identical to an
    /// uninterrupted one.
    pub fn resume(ck: Checkpoint) -> Result<Self> {
        let last = Self::evaluate_at(&ck)?;
        if last.loss.to_bits() != ck.loss_history[ck.step].to_bits() {
            return Err(Error::InvalidArgument("checkpoint loss does not reproduce".into()));
        }
        Ok(Trainer { grad: last.grad.clone(), ck, last })
    }

    fn evaluate_at(ck: &Checkpoint) -> Result<Evaluation> {
        loss_gradient(
            ck.task,
            &ck.circuit,
            &ck.theta,
            &ck.target,
            &ck.config.loss,
            ck.config.backend,
            &trainable_params(&ck.circuit, &ck.config),
            rng::sub_seed(ck.config.seed, &eval_label(ck.step)),
        )
    }

    fn next_digest(&self) -> String {
        hex(&rng::derive_key(self.ck.config.seed, &eval_label(self.ck.step + 1)))
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ck
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.ck
    }

    pub fn theta(&self) -> &[f64] {
        &self.ck.theta
    }

    /// The evaluation at the current parameters.
    pub fn last(&self) -> &Evaluation {
        &self.last
    }

    pub fn done(&self) -> bool {
        self.ck.step >= self.ck.config.steps
    }

    pub fn initial_record(&self) -> StepRecord {
        StepRecord { step: 0, loss: self.ck.loss_history[0], grad_norm: norm(&self.grad), wall_ms: 0.0 }
    }

    /// One optimiser update followed by evaluation at the new parameters.
    pub fn step(&mut self) -> Result<StepRecord> {
        let t0 = Instant::now();
        let cfg = self.ck.config.optimizer;
        self.ck.adam.update(&cfg, &mut self.ck.theta, &self.grad);
        self.ck.step += 1;
        let eval = Self::evaluate_at(&self.ck)?;
        let initial = self.ck.loss_history[0];
        if eval.loss > 1e3 * initial {
            return Err(Error::Divergence { step: self.ck.step, loss: eval.loss, initial });
        }
        self.ck.loss_history.push(eval.loss);
        self.grad = eval.grad.clone();
        self.last = eval;
        self.ck.rng_digest = self.next_digest();
        Ok(StepRecord {
            step: self.ck.step,
            loss: self.last.loss,
            grad_norm: norm(&self.grad),
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Steps until the configured count is reached, calling `on_step` after
    /// each.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepRecord, &Checkpoint) -> Result<()>) -> Result<()> {
        while !self.done() {
            let rec = self.step()?;
            on_step(&rec, &self.ck)?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn train_dqgm(config: &TrainConfig, circuit: &Circuit) -> Result<Checkpoint> {
    let mut t = Trainer::dqgm(circuit, config)?;
    t.run(|_, _| Ok(()))?;
    Ok(t.into_checkpoint())
}

pub fn train_qcbm(config: &TrainConfig, circuit: &Circuit, target: &TargetDistribution) -> Result<Checkpoint> {
    let mut t = Trainer::qcbm(circuit, config, target)?;
    t.run(|_, _| Ok(()))?;
    Ok(t.into_checkpoint())
}

/// Exact model probabilities on the checkpoint's grid.
pub fn oracle_probabilities(ck: &Checkpoint, theta: &[f64]) -> Result<Vec<f64>> {
    match ck.task {
        Task::Dqgm => dqgm_training_probabilities(&ck.circuit, theta, &ck.target.grid),
        Task::Qcbm => {
            let s = simulate(&bind(&ck.circuit, theta, None)?)?;
            Ok(bitstring_indices(&ck.circuit, &ck.target)?.into_iter().map(|x| s.probability(x)).collect())
        }
    }
}

/// Exact loss of `theta` on the checkpoint's task, for judging Monte-Carlo
/// runs.
pub fn oracle_loss(ck: &Checkpoint, theta: &[f64]) -> Result<f64> {
    let p = oracle_probabilities(ck, theta)?;
    match &ck.config.loss {
        Loss::Mse => mse_loss(&p, &ck.target),
        Loss::Mmd { kernel } => mmd_table_loss(&p, &ck.target, kernel),
    }
}
