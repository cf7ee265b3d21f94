//! Run directories: atomic file writes and the manifest that indexes them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTiming {
    pub round: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub name: String,
    pub method: String,
    pub config_sha256: String,
    pub code_version: String,
    pub status: String,
    pub error: Option<String>,
    /// Paths relative to the run directory, in write order.
    pub artifacts: Vec<String>,
    pub rounds: Vec<RoundTiming>,
    pub total_seconds: f64,
    /// Every seed that fed a random stream, by role.
    pub seeds: BTreeMap<String, u64>,
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Write `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(format!("creating {}", tmp.display()), e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(format!("writing {}", tmp.display()), e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(format!("renaming to {}", path.display()), e))
}

/// Output directory of one command invocation.
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn create(root: PathBuf, command: &str, name: &str, method: &str, config_source: &str) -> Result<Self> {
        fs::create_dir_all(&root).map_err(|e| CliError::io(format!("creating {}", root.display()), e))?;
        let mut dir = RunDir {
            root,
            manifest: RunManifest {
                format: "snpekit-run v1".into(),
                command: command.into(),
                name: name.into(),
                method: method.into(),
                config_sha256: sha256_hex(config_source),
                code_version: env!("CARGO_PKG_VERSION").into(),
                status: "running".into(),
                error: None,
                artifacts: Vec::new(),
                rounds: Vec::new(),
                total_seconds: 0.0,
                seeds: BTreeMap::new(),
            },
        };
        dir.write("config.toml", config_source.as_bytes())?;
        Ok(dir)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        if !self.manifest.artifacts.iter().any(|a| a == rel) {
            self.manifest.artifacts.push(rel.to_string());
        }
        Ok(())
    }

    /// Render into memory with `f`, then write atomically.
    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(rel, text.as_bytes())
    }

    /// Record a file written by other code (e.g. a checkpoint pair).
    pub fn register(&mut self, path: &Path) {
        if let Ok(rel) = path.strip_prefix(&self.root) {
            let rel = rel.to_string_lossy().into_owned();
            if !self.manifest.artifacts.contains(&rel) {
                self.manifest.artifacts.push(rel);
            }
        }
    }

    pub fn finish(&mut self, outcome: std::result::Result<(), &CliError>, seconds: f64) -> Result<()> {
        self.manifest.total_seconds = seconds;
        match outcome {
            Ok(()) => self.manifest.status = "complete".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(e.to_string());
            }
        }
        let text = serde_json::to_string_pretty(&self.manifest)?;
        write_atomic(&self.path(MANIFEST), text.as_bytes())
    }
}

pub fn read_manifest(run: &Path) -> Result<RunManifest> {
    let path = run.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// CSV of rows with a header; numbers in shortest round-trip form.
pub fn csv_bytes(header: &[String], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:?}")))?;
    }
    w.into_inner().map_err(|e| CliError::Core(snpekit_core::Error::Io(e.to_string())))
}
