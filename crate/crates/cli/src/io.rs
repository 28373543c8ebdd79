//! File helpers and the per-run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use depgraph_rec::RunConfig;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Collects input hashes and outputs of one run.
pub struct Run<'a> {
    command: &'static str,
    config: &'a RunConfig,
    threads: usize,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    pub fn new(command: &'static str, config: &'a RunConfig, threads: usize) -> Self {
        Run { command, config, threads, inputs: BTreeMap::new(), outputs: Vec::new() }
    }

    /// Reads an input and records its hash.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = read_bytes(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_text(&mut self, path: &Path) -> Result<String, CliError> {
        String::from_utf8(self.read(path)?)
            .map_err(|_| CliError::validation("input", format!("{} is not UTF-8", path.display())))
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write_bytes(path, bytes)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    /// Writes the manifest to `path`.
    pub fn finish(self, path: &Path) -> Result<(), CliError> {
        let config: BTreeMap<&str, String> =
            RunConfig::KEYS.iter().map(|&k| (k, self.config.get(k).expect("known key"))).collect();
        let manifest = json!({
            "tool": "depgraph-rec",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "seed": self.config.seed,
            "threads": self.threads,
            "config": config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_bytes(path, text.as_bytes())
    }
}

/// Manifest location for a file output.
pub fn manifest_for_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Manifest location for a directory output.
pub fn manifest_for_dir(out: &Path) -> PathBuf {
    out.join("manifest.json")
}
