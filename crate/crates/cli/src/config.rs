//! Pipeline configuration loaded from a TOML or JSON file and overridden by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use t2s_core::dataset::SplitConfig;
use t2s_core::linking::{Bm25Params, LinkingMode, LshConfig};
use t2s_core::llm::Mode;
use t2s_core::subschema::SubSchemaConfig;
use t2s_core::synthesis::GenerationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub mode: Mode,
    pub replay_store: Option<PathBuf>,
    pub max_in_flight: usize,
    pub requests_per_second: Option<f64>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            mode: Mode::Replay,
            replay_store: None,
            max_in_flight: 4,
            requests_per_second: None,
            base_url: None,
            model: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkingSettings {
    pub mode: LinkingMode,
    pub bm25: Bm25Params,
    pub lsh: LshConfig,
    pub value_index: bool,
}

impl Default for LinkingSettings {
    fn default() -> Self {
        Self { mode: LinkingMode::Bm25Top6, bm25: Bm25Params::default(), lsh: LshConfig::default(), value_index: true }
    }
}

/// Every knob of a run. Paths in a config file resolve against the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub db_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub fk_overrides: Option<PathBuf>,
    pub subschema: SubSchemaConfig,
    pub generation: GenerationConfig,
    pub llm: LlmSettings,
    pub split: SplitConfig,
    pub linking: LinkingSettings,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.db_path, &mut cfg.output_dir, &mut cfg.fk_overrides, &mut cfg.llm.replay_store] {
            if let Some(v) = p.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if let Err(e) = self.generation.validate() {
            bail!("generation config: {e}");
        }
        self.split.validate()?;
        self.linking.lsh.validate()?;
        if self.llm.max_in_flight == 0 {
            bail!("llm.max_in_flight must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the configuration's JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg: PipelineConfig = toml::from_str("[subschema]\nwindow_w = 2\n[generation]\nn_per_level = 1\n").unwrap();
        assert_eq!(cfg.subschema.window_w, 2);
        assert_eq!(cfg.subschema.stride_s, 2);
        assert_eq!(cfg.generation.n_per_level, 1);
        assert_eq!(cfg.generation.min_col_example_count, 400);
        assert_eq!(cfg.llm.mode, Mode::Replay);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PipelineConfig>("[subschema]\nwindow = 2\n").is_err());
        assert!(toml::from_str::<PipelineConfig>("colour = 1\n").is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "db_path = \"db.sqlite\"\n[llm]\nreplay_store = \"/abs/store.jsonl\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.db_path.unwrap(), dir.path().join("db.sqlite"));
        assert_eq!(cfg.llm.replay_store.unwrap(), PathBuf::from("/abs/store.jsonl"));
    }

    #[test]
    fn digest_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.subschema.shuffle_seed = 7;
        assert_ne!(a.digest(), b.digest());
    }
}
