use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ggm_select::io::write_json;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record written next to every file output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// sha256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// Unix time in seconds.
    pub started_at: f64,
    pub finished_at: f64,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            started_at: unix_now(),
            finished_at: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> ggm_select::Result<()> {
        let bytes = std::fs::read(path).map_err(|source| ggm_select::Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.inputs.insert(
            path.display().to_string(),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(())
    }

    pub fn finish(mut self, path: &Path) -> ggm_select::Result<()> {
        self.finished_at = unix_now();
        write_json(&self, path)
    }
}
