//! Harmonic toy speech for smoke runs: each speaker has its own pitch and
//! vocal-tract scale, each "phone" its own formant pair.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{Waveform, MODEL_SAMPLE_RATE, PEAK_LEVEL};
use crate::corpus::{assign_splits, Dataset, ManifestRow, PhonemeAlignment, PhonemeInterval, SpeakerRegistry, Split, Utterance};
use crate::error::{Error, Result};

/// `(label, F1, F2)` in Hz; `sil` has no formants.
pub const PHONES: [(&str, f64, f64); 6] = [
    ("aa", 730.0, 1090.0),
    ("iy", 270.0, 2290.0),
    ("uw", 300.0, 870.0),
    ("eh", 530.0, 1840.0),
    ("er", 490.0, 1350.0),
    ("sil", 0.0, 0.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Length of every utterance in model-rate samples.
    pub samples: usize,
    pub seed: u64,
    /// Fraction assigned to the train split by the seeded shuffle.
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_speakers: 2,
            utterances_per_speaker: 4,
            samples: 16384,
            seed: 0,
            train_fraction: 1.0,
        }
    }
}

pub fn speaker_name(i: usize) -> String {
    format!("spk{i:02}")
}

fn render(speaker: usize, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<PhonemeInterval>) {
    let f0 = 95.0 + 55.0 * speaker as f64 + rng.random_range(-5.0..5.0);
    let tract = 1.0 + 0.12 * speaker as f64;
    let sr = MODEL_SAMPLE_RATE as f64;
    let mut intervals = Vec::new();
    let mut start = 0usize;
    while start < n {
        let len = rng.random_range(1500..4500).min(n - start);
        let p = rng.random_range(0..PHONES.len());
        intervals.push(PhonemeInterval {
            start: start as u64,
            end: (start + len) as u64,
            label: PHONES[p].0.to_string(),
        });
        start += len;
    }
    let n_harm = (5000.0 / f0) as usize;
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let vibrato = rng.random_range(4.0..6.0);
    let mut out = vec![0f32; n];
    let mut phase = 0.0;
    let mut seg = 0;
    for (t, slot) in out.iter_mut().enumerate() {
        while intervals[seg].end as usize <= t {
            seg += 1;
        }
        let (_, f1, f2) = PHONES[PHONES.iter().position(|p| p.0 == intervals[seg].label).unwrap_or(0)];
        let f = f0 * (1.0 + 0.02 * (2.0 * PI * vibrato * t as f64 / sr).sin());
        phase += 2.0 * PI * f / sr;
        if f1 == 0.0 {
            *slot = 0.01 * rng.random_range(-1.0..1.0);
            continue;
        }
        let mut s = 0.0;
        for (h, ph) in phases.iter().enumerate() {
            let hf = (h + 1) as f64 * f;
            let res = |fc: f64| (-((hf - fc * tract) / 120.0).powi(2)).exp();
            let amp = res(f1) + 0.7 * res(f2) + 0.05 / (h + 1) as f64;
            s += amp * ((h + 1) as f64 * phase + ph).sin();
        }
        *slot = s as f32;
    }
    (out, intervals)
}

/// Deterministic in `cfg.seed`. Alignments are exact segment boundaries.
pub fn synthetic_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.n_speakers == 0 || cfg.utterances_per_speaker == 0 || cfg.samples == 0 {
        return Err(Error::Config("synthetic corpus sizes must be positive".into()));
    }
    let names: Vec<String> = (0..cfg.n_speakers).map(speaker_name).collect();
    let registry = SpeakerRegistry::from_ordered(names.clone())?;
    let total = cfg.n_speakers * cfg.utterances_per_speaker;
    let splits = assign_splits(total, cfg.seed, cfg.train_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut utterances = Vec::with_capacity(total);
    for s in 0..cfg.n_speakers {
        for u in 0..cfg.utterances_per_speaker {
            let (samples, intervals) = render(s, cfg.samples, &mut rng);
            utterances.push(Utterance {
                id: format!("{}_{u:03}", names[s]),
                waveform: Waveform::new(samples, MODEL_SAMPLE_RATE)?.peak_normalized(PEAK_LEVEL),
                speaker: s,
                split: splits[s * cfg.utterances_per_speaker + u],
                alignment: Some(PhonemeAlignment::new(intervals, MODEL_SAMPLE_RATE)?),
            });
        }
    }
    Dataset::new(registry, utterances)
}

/// Writes the corpus as PCM16 WAVs, `.phn` alignments and a `manifest.jsonl`
/// with pinned splits under `dir`. Returns the manifest path.
pub fn write_synthetic_corpus(dir: &Path, cfg: &SynthConfig) -> Result<std::path::PathBuf> {
    let data = synthetic_dataset(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for u in &data.utterances {
        let wav = format!("{}.wav", u.id);
        let phn = format!("{}.phn", u.id);
        u.waveform.write_pcm16(dir.join(&wav))?;
        if let Some(a) = &u.alignment {
            let p = dir.join(&phn);
            std::fs::write(&p, a.to_text()).map_err(|e| Error::io(p, e))?;
        }
        let row = ManifestRow {
            path: wav,
            speaker: data.registry.names()[u.speaker].clone(),
            alignment: Some(phn),
            split: Some(match u.split {
                Split::Train => "train".into(),
                Split::Test => "test".into(),
            }),
        };
        manifest.push_str(&serde_json::to_string(&row).map_err(|e| Error::Config(e.to_string()))?);
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_manifest;

    #[test]
    fn deterministic_and_aligned() {
        let cfg = SynthConfig::default();
        let a = synthetic_dataset(&cfg).unwrap();
        let b = synthetic_dataset(&cfg).unwrap();
        assert_eq!(a.utterances.len(), 8);
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(x.waveform, y.waveform);
            let al = x.alignment.as_ref().unwrap();
            assert_eq!(al.intervals.last().unwrap().end, cfg.samples as u64);
            assert!((x.waveform.peak() - PEAK_LEVEL).abs() < 1e-6);
        }
        assert_eq!(a.registry.names(), ["spk00", "spk01"]);
    }

    #[test]
    fn written_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            samples: 4000,
            train_fraction: 0.5,
            ..SynthConfig::default()
        };
        let path = write_synthetic_corpus(dir.path(), &cfg).unwrap();
        let m = load_manifest(&path, 99, 0.9).unwrap();
        let d = Dataset::load(&m).unwrap();
        let orig = synthetic_dataset(&cfg).unwrap();
        for (x, y) in d.utterances.iter().zip(&orig.utterances) {
            assert_eq!(x.split, y.split);
            assert_eq!(x.alignment, y.alignment);
            assert!(x.waveform.samples.iter().zip(&y.waveform.samples).all(|(a, b)| (a - b).abs() < 1e-3));
        }
    }
}
