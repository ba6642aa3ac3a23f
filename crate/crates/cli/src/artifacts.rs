//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes files into one directory and remembers their hashes.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    entries: Vec<Entry>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        log::info!("wrote {}", path.display());
        self.entries.push(Entry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Pretty JSON with a trailing newline.
    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Runs `fill` against an in-memory buffer and writes the result.
    pub fn write_with<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> multitime::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).with_context(|| format!("cannot format {name}"))?;
        self.write(name, &buf)
    }

    /// Writes `manifest.json`; it lists every earlier artifact but not itself.
    pub fn finish(self, scenario: &str, kind: &str, passed: bool) -> Result<PathBuf> {
        let manifest = serde_json::json!({
            "scenario": scenario,
            "kind": kind,
            "passed": passed,
            "artifacts": self.entries,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
