use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

/// Written next to every output so a run can be repeated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    /// Role of each input file, e.g. `network`.
    pub inputs: BTreeMap<String, InputFile>,
    /// Every resolved option, including defaults.
    pub options: serde_json::Value,
    pub rng_seeds: BTreeMap<String, u64>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: BTreeMap::new(),
            options: serde_json::Value::Null,
            rng_seeds: BTreeMap::new(),
            timings: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        self.inputs.insert(
            role.to_string(),
            InputFile {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(bytes)),
            },
        );
    }

    pub fn options<T: Serialize>(&mut self, value: &T) {
        self.options = serde_json::to_value(value).expect("options serialize");
    }
}

/// Collects output files for one run and finishes with the manifest.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Deletes `name` left over from an earlier run, if present.
    pub fn remove_stale(&self, name: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        match fs::remove_file(&path) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(CliError::io(&path, e)),
            _ => Ok(()),
        }
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.outputs = std::mem::take(&mut self.written);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        self.write(MANIFEST_FILE, &(text + "\n"))
    }
}
