//! Training configuration: flat `key = value` TOML with every key documented
//! in the bundled presets. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crnt_core::model::ModelConfig;
use crnt_core::numerics::Activation;
use crnt_core::rnnt::ModelMode;

use crate::error::{io_err, Error, Result};

pub const SEED_ENV: &str = "CRNT_SEED";

fn no_decay() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Factor applied to the learning rate after every epoch.
    #[serde(default = "no_decay")]
    pub lr_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,

    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub subsample_after: Vec<usize>,
    pub encoder_dim: usize,
    pub predictor_embed: usize,
    pub predictor_layers: usize,
    pub predictor_hidden: usize,
    pub predictor_dim: usize,
    pub extractor_embed: usize,
    pub extractor_layers: usize,
    pub extractor_hidden: usize,
    pub att_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub joint_dim: usize,
    pub activation: Activation,
    pub bias_dropout: f64,
    pub bias_at_word_start: bool,

    pub freq_masks: usize,
    pub max_freq_width: usize,
    pub time_masks: usize,
    pub max_time_width: usize,
}

impl TrainConfig {
    /// Small model for single-machine experiments on the synthetic corpus.
    pub fn desk() -> Self {
        Self {
            seed: 1,
            epochs: 15,
            batch_size: 8,
            learning_rate: 2e-3,
            lr_decay: 1.0,
            max_grad_norm: 10.0,
            encoder_layers: 2,
            encoder_hidden: 64,
            subsample_after: vec![1, 2],
            encoder_dim: 128,
            predictor_embed: 64,
            predictor_layers: 1,
            predictor_hidden: 64,
            predictor_dim: 128,
            extractor_embed: 32,
            extractor_layers: 1,
            extractor_hidden: 32,
            att_dim: 64,
            conv_channels: 2,
            conv_kernel: 1,
            joint_dim: 128,
            activation: Activation::Relu,
            bias_dropout: 0.1,
            bias_at_word_start: false,
            freq_masks: 0,
            max_freq_width: 0,
            time_masks: 0,
            max_time_width: 0,
        }
    }

    /// Published model sizes. Batch size and schedule were not published.
    pub fn published() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            learning_rate: 2e-4,
            encoder_layers: 4,
            encoder_hidden: 604,
            subsample_after: vec![1, 2],
            encoder_dim: 1024,
            predictor_embed: 256,
            predictor_layers: 2,
            predictor_hidden: 1024,
            predictor_dim: 1024,
            extractor_embed: 256,
            extractor_layers: 2,
            extractor_hidden: 100,
            att_dim: 64,
            joint_dim: 1024,
            freq_masks: 2,
            max_freq_width: 27,
            time_masks: 2,
            max_time_width: 40,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm >= 0.0) {
            return Err(Error::Config(
                "learning_rate must be positive and max_grad_norm non-negative".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.bias_dropout) {
            return Err(Error::Config("bias_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Parses `text`, then applies the seed override from the environment.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            c.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn epoch_learning_rate(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self, mode: ModelMode, vocab_size: usize, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            mode,
            vocab_size,
            feature_dim,
            encoder_layers: self.encoder_layers,
            encoder_hidden: self.encoder_hidden,
            subsample_after: self.subsample_after.clone(),
            encoder_dim: self.encoder_dim,
            predictor_embed: self.predictor_embed,
            predictor_layers: self.predictor_layers,
            predictor_hidden: self.predictor_hidden,
            predictor_dim: self.predictor_dim,
            extractor_embed: self.extractor_embed,
            extractor_layers: self.extractor_layers,
            extractor_hidden: self.extractor_hidden,
            att_dim: self.att_dim,
            conv_channels: self.conv_channels,
            conv_kernel: self.conv_kernel,
            joint_dim: self.joint_dim,
            activation: self.activation,
            bias_dropout: self.bias_dropout,
            bias_at_word_start: self.bias_at_word_start,
        }
    }
}
