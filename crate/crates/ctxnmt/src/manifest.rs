//! Run manifests written next to the outputs of every artifact-producing
//! command. Inputs are identified by git-style blob hashes (SHA-256 of
//! `"blob <len>\0" + content`); paths inside the output directory are
//! recorded relative to it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{io_err, Result};
use crate::formats::write_text;

pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(blob_hash(&std::fs::read(path).map_err(io_err(path))?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    /// `(path, hash)`
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path, out_dir: &Path) -> Result<()> {
        let hash = file_hash(path)?;
        self.inputs.push((display_path(path, out_dir), hash));
        Ok(())
    }

    pub fn output(&mut self, path: &Path, out_dir: &Path) {
        self.outputs.push(display_path(path, out_dir));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "seed = {}", self.seed);
        for (k, v) in self.config.entries() {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(out, "input = {p} {h}");
        }
        for p in &self.outputs {
            let _ = writeln!(out, "output = {p}");
        }
        out
    }

    /// Writes `<out_dir>/<stem>.run` and returns its path.
    pub fn write(&self, out_dir: &Path, stem: &str) -> Result<PathBuf> {
        let path = out_dir.join(format!("{stem}.run"));
        write_text(&path, &self.render())?;
        Ok(path)
    }
}

/// `path` relative to `base` when it lies inside it.
pub fn display_path(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.to_string_lossy().replace('\\', "/")
}
