//! JSON experiment configuration. Mirrors the core `TrainConfig`, minus the
//! model's input and class counts, which come from the dataset.

use std::fs;
use std::path::Path;

use plab_core::model::ModelConfig;
use plab_core::trainer::{SelectionMetric, TrainConfig};
use plab_core::{AugmentConfig, LossConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    MacroF1,
    MicroF1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub alpha: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSection {
    pub beta_alpha: f64,
    pub mixup_prob: f64,
    pub concat_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub dropout_rate: f64,
    pub recurrent_dropout_rate: f64,
    pub attention_clip: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub selection_metric: Selection,
    pub loss: LossSection,
    pub augment: AugmentSection,
    pub model: ModelSection,
}

impl Default for LossSection {
    fn default() -> Self {
        let l = LossConfig::default();
        LossSection {
            alpha: l.alpha,
            gamma: l.gamma,
        }
    }
}

impl Default for AugmentSection {
    fn default() -> Self {
        let a = AugmentConfig::default();
        AugmentSection {
            beta_alpha: a.beta_alpha,
            mixup_prob: a.mixup_prob,
            concat_prob: a.concat_prob,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            hidden: m.hidden,
            dropout_rate: m.dropout_rate,
            recurrent_dropout_rate: m.recurrent_dropout_rate,
            attention_clip: m.attention_clip,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            val_fraction: t.val_fraction,
            seed: t.seed,
            selection_metric: Selection::MacroF1,
            loss: LossSection::default(),
            augment: AugmentSection::default(),
            model: ModelSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn model_config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            hidden: self.model.hidden,
            num_classes,
            dropout_rate: self.model.dropout_rate,
            recurrent_dropout_rate: self.model.recurrent_dropout_rate,
            attention_clip: self.model.attention_clip,
        }
    }

    pub fn train_config(&self, input_dim: usize, num_classes: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            val_fraction: self.val_fraction,
            loss: LossConfig {
                alpha: self.loss.alpha,
                gamma: self.loss.gamma,
            },
            augment: AugmentConfig {
                beta_alpha: self.augment.beta_alpha,
                mixup_prob: self.augment.mixup_prob,
                concat_prob: self.augment.concat_prob,
            },
            model: self.model_config(input_dim, num_classes),
            seed: self.seed,
            selection_metric: match self.selection_metric {
                Selection::MacroF1 => SelectionMetric::MacroF1,
                Selection::MicroF1 => SelectionMetric::MicroF1,
            },
        }
    }

    /// Range checks, independent of any dataset.
    pub fn validate(&self) -> Result<()> {
        self.train_config(1, 1)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}
