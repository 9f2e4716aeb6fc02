//! Run configuration: one JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use itk_core::linear::{FastTextConfig, TrainConfig};
use itk_core::model::{ModelKind, ModelSpec, TfidfConfig};
use itk_core::normalize::NormalizationConfig;
use itk_core::transformer::TransformerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raw: Option<PathBuf>,
    pub clean: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub model_kind: ModelKind,
    pub seed: u64,
    pub normalization: NormalizationConfig,
    pub tfidf: TfidfConfig,
    pub fasttext: FastTextConfig,
    /// SGD settings for the linear families; `None` uses the family default.
    pub train: Option<TrainConfig>,
    pub transformer: TransformerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            model_kind: ModelKind::Logreg,
            seed: 42,
            normalization: NormalizationConfig::default(),
            tfidf: TfidfConfig::default(),
            fasttext: FastTextConfig::default(),
            train: None,
            transformer: TransformerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid run config {}: {e}", path.display())))
    }

    /// Config from `path`, or the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// The model spec for `model_kind`, with `seed` applied.
    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = match self.model_kind {
            ModelKind::Logreg => ModelSpec::Logreg {
                tfidf: self.tfidf.clone(),
                train: self.train.clone().unwrap_or_else(TrainConfig::logreg_default),
            },
            ModelKind::Fasttext => ModelSpec::Fasttext {
                fasttext: self.fasttext.clone(),
                train: self.train.clone().unwrap_or_else(TrainConfig::fasttext_default),
            },
            ModelKind::Transformer => ModelSpec::Transformer {
                transformer: self.transformer.clone(),
                seed: self.seed,
            },
        };
        spec.set_seed(self.seed);
        spec
    }
}

pub fn load_normalization(path: &Path) -> Result<NormalizationConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: NormalizationConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid normalization config {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
