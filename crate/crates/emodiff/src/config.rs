//! Run configuration: a versioned TOML file carrying the guidance settings
//! plus paths and seeds. Every CLI run writes its fully resolved config next
//! to its outputs so any artifact can be reproduced from config + checkpoints.
//!
//! TOML rather than JSON because `eta` is legitimately +/-inf and JSON
//! cannot encode infinities.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EmodiffError, Result};
use crate::synthesis::GuidanceConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Filename used for the resolved copy written next to run outputs.
pub const RESOLVED_CONFIG_NAME: &str = "resolved_config.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Directory holding the model checkpoints (denoiser.ckpt,
    /// classifier_guide.ckpt, classifier_agnostic.ckpt, embedder.ckpt).
    pub models_dir: PathBuf,
    /// Dataset directory, when the command needs one.
    pub dataset_dir: Option<PathBuf>,
    pub guidance: GuidanceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            models_dir: PathBuf::from("models"),
            dataset_dir: None,
            guidance: GuidanceConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(EmodiffError::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.guidance.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| EmodiffError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| EmodiffError::Config(format!("serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Write the resolved config into an output directory.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        self.save(&out_dir.join(RESOLVED_CONFIG_NAME))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrips_including_infinite_eta() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut cfg = RunConfig::default();
        cfg.guidance.eta = f32::INFINITY;
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.guidance.eta, f32::INFINITY);
        assert_eq!(back.seed, cfg.seed);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        let text = toml::to_string_pretty(&RunConfig::default()).unwrap() + "\nmystery = 3\n";
        std::fs::write(&path, text).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v99.toml");
        let mut cfg = RunConfig::default();
        cfg.version = 99;
        cfg.save(&path).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
