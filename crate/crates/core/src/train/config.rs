use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::optim::AdamHyper;

/// Everything one training run needs. Stored as TOML; every field has a
/// default so a config file only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub patience: usize,
    pub early_stopping: bool,
    pub batch_size: usize,
    /// Stratified share of the training file held out for validation.
    pub val_fraction: f64,
    pub use_pretrained: bool,
    pub data_train: Option<PathBuf>,
    pub data_test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub adam: AdamHyper,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            epochs: 20,
            patience: 5,
            early_stopping: true,
            batch_size: 32,
            val_fraction: 0.1,
            use_pretrained: true,
            data_train: None,
            data_test: None,
            embeddings: None,
            out_dir: PathBuf::from("runs"),
            model: ModelConfig::default(),
            adam: AdamHyper::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked before the vocabulary exists.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        if self.early_stopping && self.val_fraction == 0.0 {
            return Err(Error::Config("early stopping needs a validation split (val_fraction > 0)".into()));
        }
        if self.early_stopping && self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        self.adam.validate()?;
        // vocab_size is only known after the vocabulary is built
        ModelConfig {
            vocab_size: self.model.vocab_size.max(2),
            ..self.model.clone()
        }
        .validate()
    }
}
