use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("family {family} does not support n = {n}: {reason}")]
    UnsupportedFamily {
        family: String,
        n: usize,
        reason: &'static str,
    },
    #[error("parameter vector has length {got}, circuit expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("circuit has feature-map angles but no x was supplied")]
    MissingFeature,
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("connectivity graph is not bipartite (odd cycle {cycle:?})")]
    OddCycle { cycle: Vec<usize> },
    #[error("circuit is not bipartite with respect to its diagonal layers: {0}")]
    NotBipartite(String),
    #[error("{n} qubits exceeds the configured cap of {cap}")]
    CapacityExceeded { n: usize, cap: usize },
    #[error("sampled bitstring {0:#b} has vanishing importance weight")]
    DegenerateSample(u64),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at step {step}: loss {loss:e} exceeds 1e3 x initial {initial:e}")]
    Divergence { step: usize, loss: f64, initial: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
