//! CSV artifacts and the JSON run manifest.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::cache::Cache;
use crate::config::ExperimentConfig;
use crate::RunError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema: u32,
    pub tool: &'static str,
    pub cli_version: &'static str,
    pub library_version: &'static str,
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    pub cache_dir: Option<String>,
    pub artifacts: &'a [Artifact],
    pub metadata: &'a Map<String, Value>,
    pub wall_time_seconds: f64,
}

/// Collects the artifacts of one run. Without a directory only the primary
/// table is produced (on stdout).
pub struct Output {
    dir: Option<PathBuf>,
    artifacts: Vec<Artifact>,
    metadata: Map<String, Value>,
    started: Instant,
}

impl Output {
    pub fn new(dir: Option<PathBuf>) -> Result<Self, RunError> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| RunError::Config(format!("cannot create {}: {e}", d.display())))?;
        }
        Ok(Self { dir, artifacts: Vec::new(), metadata: Map::new(), started: Instant::now() })
    }

    /// Writes `name` into the output directory (if any); a primary table is
    /// also printed on stdout.
    pub fn emit(&mut self, name: &str, text: &str, primary: bool) -> Result<(), RunError> {
        if primary {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| RunError::Config(format!("stdout: {e}")))?;
        }
        if let Some(d) = &self.dir {
            let path = d.join(name);
            fs::write(&path, text).map_err(|e| RunError::Config(format!("cannot write {}: {e}", path.display())))?;
            self.artifacts.push(Artifact {
                file: name.to_string(),
                sha256: hex::encode(Sha256::digest(text.as_bytes())),
                rows: text.lines().filter(|l| !l.starts_with('#')).count().saturating_sub(1),
            });
        }
        Ok(())
    }

    pub fn meta(&mut self, key: &str, value: impl Serialize) {
        self.metadata.insert(key.to_string(), serde_json::to_value(value).expect("metadata serializes"));
    }

    /// Writes the manifest; a no-op without an output directory.
    pub fn finish(self, command: &str, config: &ExperimentConfig, cache: &Cache) -> Result<(), RunError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            tool: "polar-fading",
            cli_version: env!("CARGO_PKG_VERSION"),
            library_version: polar_fading::VERSION,
            command,
            config,
            cache_dir: cache.dir().map(|p| p.display().to_string()),
            artifacts: &self.artifacts,
            metadata: &self.metadata,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| RunError::Config(format!("cannot write {}: {e}", path.display())))
    }
}
