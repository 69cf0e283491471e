//! Run manifests: enough to repeat the command that produced a directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::io::write_json;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub htcl: String,
    pub htcl_core: String,
}

impl Versions {
    pub fn current() -> Self {
        Versions { htcl: env!("CARGO_PKG_VERSION").to_string(), htcl_core: htcl_core::VERSION.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_sha256: String,
    pub config: Value,
    pub seed: u64,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
    pub versions: Versions,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(config: &Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>, config: Value, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            args,
            config_sha256: config_hash(&config),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            versions: Versions::current(),
        }
    }

    /// Records an input file together with its content hash.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|source| crate::error::HtclError::Io { path: path.to_path_buf(), source })?;
        self.inputs.push(InputFile { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}
