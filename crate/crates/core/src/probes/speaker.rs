use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{seeded_permutation, SpeakerRegistry};
use crate::error::{Error, Result};
use crate::model::LatentCodes;

use super::mlp::MlpProbe;
use super::phoneme::ProbeReport;
use super::report::{Report, TextTable};
use super::ProbeConfig;

/// Codes of one utterance with its speaker's registry index.
#[derive(Debug, Clone)]
pub struct SpeakerCodes {
    pub speaker: usize,
    pub utterance: String,
    pub codes: LatentCodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerReport {
    pub accuracy: f64,
    /// `1 / C` for the `C` speakers that have codes.
    pub chance: f64,
    /// `accuracy - chance`.
    pub gap: f64,
    pub speakers: Vec<String>,
    pub n_train_codes: usize,
    pub n_val_codes: usize,
    pub n_test_codes: usize,
    pub n_test_utterances: usize,
    pub probe: ProbeReport,
}

impl Report for SpeakerReport {
    fn to_text(&self) -> String {
        let mut t = TextTable::new(&["quantity", "value"]);
        t.row(&["speaker probe accuracy".into(), format!("{:.4}", self.accuracy)]);
        t.row(&["chance (1/C)".into(), format!("{:.4}", self.chance)]);
        t.row(&["gap".into(), format!("{:+.4}", self.gap)]);
        t.row(&["speakers".into(), self.speakers.len().to_string()]);
        t.row(&[
            "codes train / val / test".into(),
            format!("{} / {} / {}", self.n_train_codes, self.n_val_codes, self.n_test_codes),
        ]);
        t.render()
    }
}

/// Trains a fresh speaker classifier on individual code vectors and scores it
/// on utterances it never saw. Each speaker's utterances are split
/// separately (seeded) so every split holds every speaker. No pass/fail
/// judgment is made.
pub fn speaker_independence_report(
    codes: &[SpeakerCodes],
    registry: &SpeakerRegistry,
    cfg: &ProbeConfig,
) -> Result<SpeakerReport> {
    let mut by_speaker: BTreeMap<usize, Vec<&SpeakerCodes>> = BTreeMap::new();
    for c in codes {
        if c.speaker >= registry.len() {
            return Err(Error::Argument(format!(
                "utterance {} has speaker index {} outside registry",
                c.utterance, c.speaker
            )));
        }
        by_speaker.entry(c.speaker).or_default().push(c);
    }
    if by_speaker.len() < 2 {
        return Err(Error::Config("speaker probe needs codes from at least two speakers".into()));
    }
    let speakers: Vec<String> = by_speaker.keys().map(|&s| registry.names()[s].clone()).collect();

    let mut sets: [(Vec<Vec<f32>>, Vec<usize>); 3] = Default::default();
    let mut n_test_utterances = 0;
    for (class, (spk, utts)) in by_speaker.iter().enumerate() {
        let n = utts.len();
        let n_test = ((n as f64 * (1.0 - cfg.train_fraction - cfg.val_fraction)).round() as usize).max(1);
        let n_val = ((n as f64 * cfg.val_fraction).round() as usize).max(1);
        if n < n_test + n_val + 1 {
            return Err(Error::Config(format!(
                "speaker {} has {n} utterances; the probe needs at least {}",
                registry.names()[*spk],
                n_test + n_val + 1
            )));
        }
        n_test_utterances += n_test;
        let perm = seeded_permutation(n, cfg.seed ^ (*spk as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for (rank, &i) in perm.iter().enumerate() {
            let which = if rank < n_test {
                2
            } else if rank < n_test + n_val {
                1
            } else {
                0
            };
            let values = &utts[i].codes.values;
            for col in values.columns() {
                sets[which].0.push(col.to_vec());
                sets[which].1.push(class);
            }
        }
    }
    let [train, val, test] = sets;
    if train.0.is_empty() || val.0.is_empty() || test.0.is_empty() {
        return Err(Error::Config("speaker probe split produced an empty set of codes".into()));
    }
    let probe = MlpProbe::from_config(cfg).train((&train.0, &train.1), (&val.0, &val.1), speakers.len())?;
    let predictions = probe.predict(&test.0)?;
    let mut report = ProbeReport::from_predictions(speakers.clone(), &train.1, &test.1, &predictions);
    report.n_val = val.0.len();
    report.epochs_run = probe.epochs_run;
    report.best_epoch = probe.best_epoch;
    let chance = 1.0 / speakers.len() as f64;
    Ok(SpeakerReport {
        accuracy: report.accuracy,
        chance,
        gap: report.accuracy - chance,
        speakers,
        n_train_codes: train.0.len(),
        n_val_codes: val.0.len(),
        n_test_codes: test.0.len(),
        n_test_utterances,
        probe: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn one_speaker_is_a_config_error() {
        let reg = SpeakerRegistry::from_names(["a", "b"]);
        let c = SpeakerCodes {
            speaker: 0,
            utterance: "u".into(),
            codes: LatentCodes {
                values: Array2::zeros((2, 3)),
                code_rate: 1.0,
            },
        };
        assert!(matches!(
            speaker_independence_report(&[c], &reg, &ProbeConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn leaky_codes_are_identified() {
        let reg = SpeakerRegistry::from_names(["a", "b", "c"]);
        let mut codes = Vec::new();
        for s in 0..3 {
            for u in 0..10 {
                let values = Array2::from_shape_fn((3, 4), |(r, _)| if r == s { 1.0 } else { 0.0 });
                codes.push(SpeakerCodes {
                    speaker: s,
                    utterance: format!("{s}-{u}"),
                    codes: LatentCodes { values, code_rate: 1.0 },
                });
            }
        }
        let cfg = ProbeConfig {
            hidden: 16,
            ..ProbeConfig::default()
        };
        let r = speaker_independence_report(&codes, &reg, &cfg).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.chance - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.n_test_codes, 3 * 2 * 4);
    }
}
