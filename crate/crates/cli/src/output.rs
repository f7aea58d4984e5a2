//! Run directory, artifact digests and the manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub label: String,
    pub command: String,
    pub timestamp: String,
    pub library_version: String,
    pub seed: u64,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub config: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

/// Output directory of one run. Every file goes through [`Run::write`] so the
/// manifest lists all of them.
pub struct Run {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::config(format!("{}: {e}", path.display()))
}

impl Run {
    /// Creates `<outdir>/<label>`. A previous run with the same label is
    /// replaced; any other non-empty directory is refused.
    pub fn create(outdir: &Path, label: &str) -> Result<Self, CliError> {
        if label.is_empty() || label.contains(['/', '\\']) || label == "." || label == ".." {
            return Err(CliError::config(format!("invalid run label {label:?}")));
        }
        let dir = outdir.join(label);
        if dir.exists() {
            let empty = fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?.next().is_none();
            if !empty {
                if !dir.join("manifest.json").is_file() {
                    return Err(CliError::config(format!(
                        "{} exists and is not a previous run directory",
                        dir.display()
                    )));
                }
                fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            }
        }
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self {
            dir,
            artifacts: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Renders with `f` into memory, then writes.
    pub fn write_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| CliError::config(format!("{rel}: {e}")))?;
        self.write(rel, &buf)
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<PathBuf, CliError> {
        let mut artifacts = self.artifacts;
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.artifacts = artifacts;
        let path = self.dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::config(e.to_string()))?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

/// `SOURCE_DATE_EPOCH` when set (reproducible builds convention), else now.
pub fn timestamp() -> String {
    let t = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
        .unwrap_or_else(Utc::now);
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}
