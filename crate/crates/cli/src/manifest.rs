use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use pdhmr_core::io::write_json;
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance of one run. Timing fields make it the only output that differs
/// between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub threads: usize,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, threads: usize) -> Self {
        let started = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0.0, |d| d.as_secs_f64());
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                seed: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                threads,
                started_unix_s: started,
                wall_clock_s: 0.0,
            },
            start: Instant::now(),
        }
    }

    pub fn config<T: Serialize>(mut self, config: &T) -> Self {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn input(mut self, name: &str, value: impl Into<String>) -> Self {
        self.manifest.inputs.insert(name.to_string(), value.into());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn output(&mut self, relative: impl Into<String>) {
        self.manifest.outputs.push(relative.into());
    }

    pub fn finish(mut self, out: &Path) -> Result<RunManifest> {
        self.manifest.wall_clock_s = self.start.elapsed().as_secs_f64();
        write_json(&out.join(MANIFEST_FILE), &self.manifest)?;
        Ok(self.manifest)
    }
}
