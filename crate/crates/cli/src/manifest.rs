use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn entry(path: &Path) -> Result<FileEntry> {
    Ok(FileEntry { path: path.display().to_string(), sha256: hash_file(path)? })
}

/// What a command read, which seeds it used and what it wrote. Contains no
/// timestamps so reruns produce the same file.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: Option<FileEntry>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileEntry>,
    pub models: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &str, config: Option<&Path>) -> Result<Self> {
        Ok(Self {
            tool: "safenav",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: config.map(entry).transpose()?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            models: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn seed(&mut self, name: impl Into<String>, seed: u64) {
        self.seeds.insert(name.into(), seed);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(entry(path)?);
        Ok(())
    }

    pub fn model(&mut self, path: &Path) -> Result<()> {
        self.models.push(entry(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(entry(path)?);
        Ok(())
    }

    /// Writes `manifest-<command>.json` under `out`.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(format!("manifest-{}.json", self.command));
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
