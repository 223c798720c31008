//! Run directories and the manifest written into each of them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::exit::Failure;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let digest = Sha256::digest(&data);
        Ok(Self {
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            bytes: data.len() as u64,
        })
    }
}

/// Everything needed to replay a run: the command line, the resolved
/// configuration and content hashes of every input and output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
    pub status: String,
    pub summary: Value,
}

/// An output directory that did not exist before this run.
pub struct RunDir {
    root: PathBuf,
    command: String,
    started: Instant,
    started_unix: u64,
    inputs: Vec<FileHash>,
    outputs: Vec<PathBuf>,
}

impl RunDir {
    /// Fails if `root` already exists; runs never write into old directories.
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        if root.exists() {
            return Err(Failure::validation(format!(
                "output directory {} already exists; run directories are append-only",
                root.display()
            ))
            .into());
        }
        if let Some(parent) = root.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::create_dir(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.to_string(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileHash::of(path)?);
        Ok(())
    }

    /// Path of a new output file; it is hashed when the manifest is written.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn finish(self, config: Value, seed: Option<u64>, threads: usize, status: &str, summary: Value) -> Result<PathBuf> {
        let outputs = self
            .outputs
            .iter()
            .filter(|p| p.exists())
            .map(|p| FileHash::of(p))
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            tool: "nmor".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            argv: std::env::args().collect(),
            config,
            seed,
            threads,
            inputs: self.inputs,
            outputs,
            started_unix: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            status: status.into(),
            summary,
        };
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
