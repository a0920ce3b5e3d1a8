//! Run configuration and provenance hashing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::EncoderKind;
use crate::prompt::PromptVariant;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("batch_size must be at least 1")]
    BatchSize,
    #[error("learning_rate must be positive and finite, got {0}")]
    LearningRate(f64),
    #[error("patience must be at least 1")]
    Patience,
    #[error("max_epochs must be at least 1")]
    MaxEpochs,
    #[error("resolution must be positive and finite, got {0}")]
    Resolution(f64),
    #[error("embedding dimension must be at least 1")]
    Dimension,
    #[error("cutoffs must be non-empty and at least 1")]
    Cutoffs,
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn hash_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Hash of a value's JSON form, truncated to 16 hex digits.
pub fn json_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types always serialize");
    hash_hex(&json)[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub encoder: EncoderKind,
    pub prompt_variant: PromptVariant,
    pub resolution: f64,
    pub d: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.001,
            max_epochs: 100,
            patience: 50,
            seed: 0,
            encoder: EncoderKind::Gru,
            prompt_variant: PromptVariant::C,
            resolution: 1.0,
            d: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(ConfigError::BatchSize);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::LearningRate(self.learning_rate));
        }
        if self.patience == 0 {
            return Err(ConfigError::Patience);
        }
        if self.max_epochs == 0 {
            return Err(ConfigError::MaxEpochs);
        }
        check_resolution(self.resolution)?;
        if self.d == 0 {
            return Err(ConfigError::Dimension);
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }
}

pub fn check_resolution(r: f64) -> Result<(), ConfigError> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Resolution(r))
    }
}

pub const DEFAULT_RESOLUTIONS: [f64; 7] = [0.1, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0];

/// Whole-pipeline configuration, loaded from one JSON file and then
/// overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub gap_seconds: i64,
    pub min_session_len: usize,
    pub min_user_sessions: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Split files written by `preprocess`.
    pub data_dir: PathBuf,
    /// Graph and partition written by `mine`.
    pub artifacts_dir: PathBuf,
    /// Checkpoints, logs and reports.
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub ks: Vec<usize>,
    pub resolutions: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            gap_seconds: 3600,
            min_session_len: 3,
            min_user_sessions: 5,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            data_dir: PathBuf::from("data"),
            artifacts_dir: PathBuf::from("artifacts"),
            out_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
            ks: vec![5, 10],
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate()?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(ConfigError::Cutoffs);
        }
        self.resolutions.iter().try_for_each(|&r| check_resolution(r))
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }
}
