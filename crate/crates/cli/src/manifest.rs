use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

/// Record of one invocation, written to `<out-dir>/<subcommand>-manifest.json`
/// whether or not the run succeeded.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub config_digest: Option<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<PathBuf>,
    pub exit_code: u8,
    pub error: Option<String>,
}

pub struct Run {
    subcommand: &'static str,
    started: u128,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub outputs: Vec<PathBuf>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl Run {
    pub fn start(subcommand: &'static str, seed: Option<u64>) -> Self {
        Run { subcommand, started: now_ms(), seed, config_digest: None, outputs: vec![] }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(self, out_dir: &Path, exit_code: u8, error: Option<anyhow::Error>) -> anyhow::Result<()> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config_digest: self.config_digest,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs: self.outputs,
            exit_code,
            error: error.map(|e| format!("{e:#}")),
        };
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(format!("{}-manifest.json", self.subcommand));
        std::fs::write(path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }
}
