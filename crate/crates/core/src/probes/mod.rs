//! Latent-space probes, objective metrics and the real-time-factor benchmark.

mod bench;
mod extract;
mod labeling;
mod mlp;
mod objective;
mod phoneme;
mod report;
mod speaker;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bench::{bench_rtf, machine_info, summarize_timings, MachineInfo, ReferencePoint, RtfResult, StageTiming};
pub use extract::{encode_dataset, labeled_dataset_codes, phoneme_probe};
pub use labeling::{code_span, label_codes, LabeledCode};
pub use mlp::{MlpProbe, TrainedProbe};
pub use objective::{
    log_spectral_distance, mel_cepstral_distortion, mel_frame_l2, mel_l2, objective_eval, pair_up, ExternalScorer,
    MetricSummary, MetricTable,
};
pub use phoneme::{split_labeled, train_phoneme_probe, ProbeReport};
pub use report::{write_report, Report, TextTable};
pub use speaker::{speaker_independence_report, SpeakerCodes, SpeakerReport};

/// Probe classifier and data-split settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            learning_rate: 0.1,
            batch_size: 64,
            max_epochs: 500,
            patience: 10,
            train_fraction: 0.7,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("probe hidden, batch_size, max_epochs and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("probe learning_rate must be positive".into()));
        }
        let t = self.train_fraction;
        let v = self.val_fraction;
        if !(t > 0.0 && v > 0.0 && t + v < 1.0) {
            return Err(Error::Config(
                "probe train_fraction and val_fraction must be positive and leave room for a test split".into(),
            ));
        }
        Ok(())
    }
}
