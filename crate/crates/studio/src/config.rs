use std::fs;
use std::path::{Path, PathBuf};

use phonostudio::audio::{DEFAULT_NORMALIZE_DBFS, DEFAULT_TRIM_THRESHOLD_DBFS, SUPPORTED_DEPTHS};
use serde::{Deserialize, Serialize};

use crate::StudioError;

pub const SUPPORTED_RATES: [u32; 8] =
    [8000, 11_025, 16_000, 22_050, 32_000, 44_100, 48_000, 96_000];
/// Characters removed from text before transcription. The apostrophe is
/// kept because lexicons contain words such as "don't".
pub const DEFAULT_STRIP_CHARS: &str = ".,;:!?\"()[]{}<>«»“”„‟‘’‚…¿¡—–-/\\*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub sample_rate: u32,
    pub bit_depth: u16,
    #[serde(default = "default_normalize")]
    pub normalize_target_dbfs: f64,
    #[serde(default = "default_trim")]
    pub trim_threshold_dbfs: f64,
    #[serde(default = "yes")]
    pub auto_normalize: bool,
    #[serde(default = "yes")]
    pub auto_trim: bool,
    pub storage_dir: PathBuf,
    #[serde(default = "default_strip")]
    pub strip_chars: String,
}

fn default_normalize() -> f64 {
    DEFAULT_NORMALIZE_DBFS
}

fn default_trim() -> f64 {
    DEFAULT_TRIM_THRESHOLD_DBFS
}

fn yes() -> bool {
    true
}

fn default_strip() -> String {
    DEFAULT_STRIP_CHARS.to_string()
}

impl SessionConfig {
    pub fn new(storage_dir: impl Into<PathBuf>) -> Self {
        Self {
            sample_rate: 16_000,
            bit_depth: 16,
            normalize_target_dbfs: DEFAULT_NORMALIZE_DBFS,
            trim_threshold_dbfs: DEFAULT_TRIM_THRESHOLD_DBFS,
            auto_normalize: true,
            auto_trim: true,
            storage_dir: storage_dir.into(),
            strip_chars: default_strip(),
        }
    }

    /// Reads a JSON config. A relative `storage_dir` is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, StudioError> {
        let text = fs::read_to_string(path)
            .map_err(|e| StudioError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: SessionConfig = serde_json::from_str(&text)
            .map_err(|e| StudioError::Config(format!("{}: {e}", path.display())))?;
        if cfg.storage_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.storage_dir = dir.join(&cfg.storage_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StudioError> {
        if !SUPPORTED_RATES.contains(&self.sample_rate) {
            return Err(StudioError::Config(format!(
                "sample rate {} not in {SUPPORTED_RATES:?}",
                self.sample_rate
            )));
        }
        if !SUPPORTED_DEPTHS.contains(&self.bit_depth) {
            return Err(StudioError::Config(format!(
                "bit depth {} not in {SUPPORTED_DEPTHS:?}",
                self.bit_depth
            )));
        }
        if !(self.normalize_target_dbfs <= 0.0) {
            return Err(StudioError::Config(
                "normalize_target_dbfs must be at most 0".into(),
            ));
        }
        if !(self.trim_threshold_dbfs < 0.0) {
            return Err(StudioError::Config(
                "trim_threshold_dbfs must be negative".into(),
            ));
        }
        Ok(())
    }

    /// Creates the storage directory and checks that it accepts files.
    pub fn prepare_storage(&self) -> Result<(), StudioError> {
        let dir = &self.storage_dir;
        fs::create_dir_all(dir)
            .map_err(|e| StudioError::Config(format!("{}: {e}", dir.display())))?;
        tempfile::NamedTempFile::new_in(dir)
            .map_err(|e| StudioError::Config(format!("{} is not writable: {e}", dir.display())))?;
        Ok(())
    }
}
