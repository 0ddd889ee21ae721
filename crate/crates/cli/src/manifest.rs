//! Run manifests written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a command bit-exactly in replay mode. Holds no
/// timestamps so identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_digest: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputFile>,
    pub counts: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Manifest {
    pub fn new(command: &str, config: &PipelineConfig) -> Self {
        let seeds = BTreeMap::from([
            ("subschema_shuffle".to_string(), config.subschema.shuffle_seed),
            ("split".to_string(), config.split.seed),
            ("lsh".to_string(), config.linking.lsh.seed),
        ]);
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: config.digest(),
            config: config.clone(),
            seeds,
            inputs: Vec::new(),
            counts: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(InputFile { role: role.to_string(), path: path.to_path_buf(), sha256: file_sha256(path)? });
        Ok(())
    }

    pub fn count(&mut self, key: &str, value: impl Into<Value>) {
        self.counts.insert(key.to_string(), value.into());
    }

    /// Writes `<command>.manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
