//! Shared pipeline configuration: one structured file (TOML) covers
//! thresholds, provider choice, augmentation, model shape, training, and
//! evaluation. Every field has a default, so partial files work, and the
//! CLI overrides individual fields with flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::model::{AttentionMode, ModelConfig};
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
}

/// Derive a named sub-seed from the run seed: all randomness flows from one
/// seed through labeled channels, so partial reruns stay reproducible.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderChoice {
    Hashing,
    Model,
    Remote,
}

/// Embedding provider selection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderChoice,
    pub dim: usize,
    pub seed: u64,
    /// Checkpoint path for the model provider.
    pub checkpoint: Option<String>,
    /// Endpoint and model name for the remote provider.
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderChoice::Hashing,
            dim: crate::embedding::HashingProvider::DEFAULT_DIM,
            seed: 0,
            checkpoint: None,
            endpoint: None,
            model_name: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientChoice {
    Offline,
    Remote,
}

/// Generation client selection for augmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub kind: ClientChoice,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub max_retries: u32,
    pub temperature: f64,
    /// Optional template file overrides; the compiled-in templates apply
    /// otherwise.
    pub token_prompt_path: Option<String>,
    pub sentence_prompt_path: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            kind: ClientChoice::Offline,
            endpoint: None,
            model_name: "qwen-2.5-plus".into(),
            max_retries: 3,
            temperature: 0.7,
            token_prompt_path: None,
            sentence_prompt_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QcaScoringMode {
    EmbeddingSimilarity,
    Loglikelihood,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub mode: QcaScoringMode,
    pub max_new: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: QcaScoringMode::EmbeddingSimilarity,
            max_new: 96,
            seed: 42,
        }
    }
}

fn default_model_config() -> ModelConfig {
    ModelConfig {
        attention_mode: AttentionMode::Causal,
        ..ModelConfig::toy()
    }
}

/// Whole-pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub train_fraction: f64,
    pub theta_tok: f64,
    pub theta_sen: f64,
    pub provider: ProviderConfig,
    pub client: ClientConfig,
    pub augment: AugmentConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            train_fraction: 0.7,
            theta_tok: 0.8,
            theta_sen: 0.7,
            provider: ProviderConfig::default(),
            client: ClientConfig::default(),
            augment: AugmentConfig::default(),
            model: default_model_config(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Stable content hash of the effective configuration.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
