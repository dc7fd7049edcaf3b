//! Config loading and the provenance envelope wrapped around every report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use lalign_core::embedding::{LABELS_FILE, MANIFEST_FILE, VECTORS_FILE};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = "lalign";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Reads a command config from JSON, or its defaults when no file is given.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let bytes = fs::read(path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

pub fn require<'a>(value: &'a Option<PathBuf>, name: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("missing required `{name}` (flag or config field)")))
}

/// SHA-256 of every input file, keyed by path.
#[derive(Debug, Default, Serialize)]
pub struct InputHashes(BTreeMap<String, String>);

impl InputHashes {
    pub fn file(&mut self, path: &Path) -> CliResult<()> {
        if !path.is_file() {
            return Err(lalign_core::Error::MissingFile(path.to_path_buf()).into());
        }
        let digest = Sha256::digest(fs::read(path)?);
        self.0
            .insert(path.display().to_string(), hex::encode(digest));
        Ok(())
    }

    pub fn bundle(&mut self, dir: &Path) -> CliResult<()> {
        self.file(&dir.join(MANIFEST_FILE))?;
        self.file(&dir.join(VECTORS_FILE))?;
        let labels = dir.join(LABELS_FILE);
        if labels.is_file() {
            self.file(&labels)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    threads: usize,
    config: &'a C,
    inputs: &'a InputHashes,
    result: &'a R,
}

pub struct Provenance<'a> {
    pub command: &'a str,
    pub threads: usize,
    pub inputs: InputHashes,
}

impl Provenance<'_> {
    pub fn write<C: Serialize, R: Serialize>(
        &self,
        path: &Path,
        config: &C,
        result: &R,
    ) -> CliResult<()> {
        let envelope = Envelope {
            tool: TOOL,
            version: VERSION,
            command: self.command,
            threads: self.threads,
            config,
            inputs: &self.inputs,
            result,
        };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text)?;
        Ok(())
    }
}
