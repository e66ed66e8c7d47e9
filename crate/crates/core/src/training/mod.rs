//! Losses, the autoencoder and adversarial training loops, and the optional
//! speaker-confusion regularizer.

mod adversarial;
mod confusion;
mod losses;
mod metrics;
mod stage1;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

pub use adversarial::{train_stage2, train_vocoder, AdversarialMode, AdversarialTrainer};
pub use confusion::{domain_confusion_regularizer, SpeakerClassifier};
pub use losses::{content_loss, content_loss_mean, encoder_content_loss, stage1_loss, Stage1Loss};
pub use metrics::{MetricRow, MetricsLog};
pub use stage1::{train_stage1, Stage1Trainer};

/// Autoencoder reconstruction training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub optimizer: AdamConfig,
    pub epochs: u64,
    pub batch_size: usize,
    /// Training chunk length in samples.
    pub chunk_len: usize,
    /// Stops early once this many optimizer steps have run.
    pub max_steps: Option<u64>,
    /// Emit a checkpoint every this many epochs (and after the last one).
    pub checkpoint_every: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::new(1e-3, 0.9, 0.99),
            epochs: 200,
            batch_size: 16,
            chunk_len: 8192,
            max_steps: None,
            checkpoint_every: 1,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        validate_loop("stage1", &self.optimizer, self.epochs, self.batch_size, self.chunk_len, self.checkpoint_every)
    }
}

/// End-to-end adversarial training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub optimizer: AdamConfig,
    pub disc_optimizer: AdamConfig,
    pub epochs: u64,
    pub batch_size: usize,
    pub chunk_len: usize,
    pub content_weight: f64,
    pub feature_weight: f64,
    pub max_steps: Option<u64>,
    pub checkpoint_every: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::new(1e-4, 0.5, 0.9),
            disc_optimizer: AdamConfig::new(1e-4, 0.5, 0.9),
            epochs: 200,
            batch_size: 16,
            chunk_len: 8192,
            content_weight: 20.0,
            feature_weight: 10.0,
            max_steps: None,
            checkpoint_every: 1,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        validate_loop("stage2", &self.optimizer, self.epochs, self.batch_size, self.chunk_len, self.checkpoint_every)?;
        validate_adam("stage2.disc_optimizer", &self.disc_optimizer)?;
        if !(self.content_weight > 0.0) || !(self.feature_weight >= 0.0) {
            return Err(Error::Config(
                "stage2.content_weight must be positive and feature_weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Vocoder-only adversarial training on reference Mel input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocoderStageConfig {
    pub optimizer: AdamConfig,
    pub disc_optimizer: AdamConfig,
    pub epochs: u64,
    pub batch_size: usize,
    pub chunk_len: usize,
    pub feature_weight: f64,
    pub max_steps: Option<u64>,
    pub checkpoint_every: u64,
}

impl Default for VocoderStageConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::new(1e-4, 0.5, 0.9),
            disc_optimizer: AdamConfig::new(1e-4, 0.5, 0.9),
            epochs: 200,
            batch_size: 16,
            chunk_len: 8192,
            feature_weight: 10.0,
            max_steps: None,
            checkpoint_every: 1,
        }
    }
}

impl VocoderStageConfig {
    pub fn validate(&self) -> Result<()> {
        validate_loop(
            "vocoder_training",
            &self.optimizer,
            self.epochs,
            self.batch_size,
            self.chunk_len,
            self.checkpoint_every,
        )?;
        validate_adam("vocoder_training.disc_optimizer", &self.disc_optimizer)?;
        if !(self.feature_weight >= 0.0) {
            return Err(Error::Config("vocoder_training.feature_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Adversarial speaker classifier on the codes (off by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfusionConfig {
    pub enabled: bool,
    pub weight: f64,
    pub hidden: usize,
    pub optimizer: AdamConfig,
}

impl Default for ConfusionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            weight: 0.1,
            hidden: 64,
            optimizer: AdamConfig::new(1e-3, 0.9, 0.99),
        }
    }
}

impl ConfusionConfig {
    pub fn validate(&self) -> Result<()> {
        validate_adam("confusion.optimizer", &self.optimizer)?;
        if self.hidden == 0 || !(self.weight >= 0.0) {
            return Err(Error::Config("confusion.hidden must be positive and weight non-negative".into()));
        }
        Ok(())
    }
}

fn validate_adam(name: &str, c: &AdamConfig) -> Result<()> {
    let ok = c.lr > 0.0
        && (0.0..1.0).contains(&c.beta1)
        && (0.0..1.0).contains(&c.beta2)
        && c.eps > 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name}: lr and eps must be positive, betas in [0, 1)"
        )))
    }
}

fn validate_loop(
    name: &str,
    opt: &AdamConfig,
    epochs: u64,
    batch_size: usize,
    chunk_len: usize,
    checkpoint_every: u64,
) -> Result<()> {
    validate_adam(&format!("{name}.optimizer"), opt)?;
    if epochs == 0 || batch_size == 0 || chunk_len == 0 || checkpoint_every == 0 {
        return Err(Error::Config(format!(
            "{name}: epochs, batch_size, chunk_len and checkpoint_every must be positive"
        )));
    }
    Ok(())
}
