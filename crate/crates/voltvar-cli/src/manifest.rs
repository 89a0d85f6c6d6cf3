//! Run manifests: every command that writes artifacts drops a manifest.json
//! next to them recording the tool version, the exact parameters, the seed,
//! and a content hash of every input file. Reruns can be audited against it
//! byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: &'static str,
    pub parameters: Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Map::is_empty")]
    pub stats: Map<String, Value>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand,
            parameters: Map::new(),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stats: Map::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    /// Hash the file now; manifests never reference content they have not
    /// seen.
    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let digest = sha256_hex(path)?;
        self.inputs.push(InputRecord { path: path.display().to_string(), sha256: digest });
        Ok(self)
    }

    pub fn output(&mut self, name: impl Into<String>) -> &mut Self {
        self.outputs.push(name.into());
        self
    }

    pub fn stat(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.stats.insert(key.to_string(), value.into());
        self
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
