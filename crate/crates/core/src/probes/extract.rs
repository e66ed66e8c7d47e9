use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::SpeakerEmbedding;
use crate::pipeline::FastVc;

use super::labeling::{label_codes, LabeledCode};
use super::phoneme::{split_labeled, train_phoneme_probe, ProbeReport};
use super::speaker::SpeakerCodes;
use super::ProbeConfig;

/// Encodes every utterance with its own speaker's one-hot.
pub fn encode_dataset(model: &FastVc, data: &Dataset) -> Result<Vec<SpeakerCodes>> {
    let n = model.registry.len();
    data.utterances
        .iter()
        .map(|u| {
            let mel = model.melfront.logmel(&u.waveform)?;
            let codes = model.autoencoder.encode_codes(&mel, &SpeakerEmbedding::new(u.speaker, n)?)?;
            Ok(SpeakerCodes {
                speaker: u.speaker,
                utterance: u.id.clone(),
                codes,
            })
        })
        .collect()
}

/// Codes of every aligned utterance, labeled by majority overlap.
pub fn labeled_dataset_codes(model: &FastVc, data: &Dataset) -> Result<Vec<LabeledCode>> {
    let hop = model.config.melfront.hop;
    let k = model.config.bottleneck.k;
    let mut out = Vec::new();
    for (u, c) in data.utterances.iter().zip(encode_dataset(model, data)?) {
        if let Some(a) = &u.alignment {
            out.extend(label_codes(&c.codes, a, hop, k, &u.id)?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no utterance in the dataset has a phoneme alignment".into()));
    }
    Ok(out)
}

/// Phoneme probe on the model's codes with a seeded 70/10/20 code split.
pub fn phoneme_probe(model: &FastVc, data: &Dataset, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let (train, val, test) = split_labeled(labeled_dataset_codes(model, data)?, cfg);
    train_phoneme_probe(&train, &val, &test, cfg)
}
