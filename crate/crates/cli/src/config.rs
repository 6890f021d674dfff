//! On-disk configuration files. Every file carries `"schema": 1` and unknown
//! fields are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use iqpforge::circuit::{build_family, Bipartition, Circuit, CircuitFamily, FamilyOptions};
use iqpforge::diagnostics::StudyConfig;
use iqpforge::trainer::{Task, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitSpec {
    pub family: CircuitFamily,
    pub n: usize,
    #[serde(default)]
    pub features: usize,
    #[serde(default)]
    pub bipartition: Option<Bipartition>,
}

impl CircuitSpec {
    pub fn build(&self) -> iqpforge::Result<Circuit> {
        let mut opts = FamilyOptions::default().with_features(self.features);
        if let Some(b) = &self.bipartition {
            opts = opts.with_bipartition(b.clone());
        }
        build_family(self.family, self.n, &opts)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub schema: u32,
    #[serde(default = "default_task")]
    pub task: Task,
    pub circuit: CircuitSpec,
    pub train: TrainConfig,
}

fn default_task() -> Task {
    Task::Dqgm
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseFile {
    pub schema: u32,
    pub families: Vec<CircuitFamily>,
    pub ns: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub study: StudyConfig,
    /// CSV of `n,trial,x` rows: externally produced samples for instances
    /// beyond the oracle cap. Relative paths resolve against the config.
    #[serde(default)]
    pub samples: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityFile {
    pub schema: u32,
    pub families: Vec<CircuitFamily>,
    pub ns: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    pub schema: u32,
    pub circuit: CircuitSpec,
    /// Parameter values; when absent every angle is drawn as `kπ/8` from the
    /// seed.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

/// Parses `path`, checking the schema version. Returns the value and the
/// SHA-256 of its canonical JSON form (keys sorted, no whitespace).
pub fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<(T, String)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    match value.get("schema").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA as u64 => {}
        Some(v) => bail!("{}: unsupported schema version {v} (expected {SCHEMA})", path.display()),
        None => bail!("{}: missing \"schema\": {SCHEMA}", path.display()),
    }
    let digest = digest(&value);
    let parsed = serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))?;
    Ok((parsed, digest))
}

pub fn digest<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serialises");
    Sha256::digest(canonical.to_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}
