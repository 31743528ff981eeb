//! The single TOML document that drives every command.
//!
//! Every field has a default, so an empty file is a valid configuration;
//! unknown keys are rejected. [`Config::resolved`] prints the document with
//! all defaults expanded.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Fusion, GalleryRep};
use crate::fusion::{DropoutSpec, ModelConfig, ModelShape};
use crate::losses::HyperParams;
use crate::synthdata::{GeneratorConfig, Protocol};
use crate::trainer::TrainerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub protocol: Protocol,
    pub fusion: Fusion,
    pub gallery: GalleryRep,
    /// Seed of the pair draw or gallery split.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            protocol: Protocol::Verification {
                pairs: 4000,
                positive_fraction: 0.5,
            },
            fusion: Fusion::Quality,
            gallery: GalleryRep::Mean,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Seed of model initialization and training randomness.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub loss: HyperParams,
    pub dropout: DropoutSpec,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.dropout.validate()?;
        self.trainer.validate()?;
        if self.generator.train_classes < 2 {
            return Err(Error::Config("need at least two training classes".into()));
        }
        Ok(())
    }

    /// The configuration with every default written out.
    pub fn resolved(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Model dimensions implied by the generator.
    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            input_dims: self.generator.input_dims(),
            num_classes: self.generator.train_classes,
        }
    }
}
