//! Turns a raw manifest into a cached corpus at the model sample rate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{load_manifest, Dataset, ManifestRow, Split};
use crate::error::{Error, Result};

/// Paths written by [`prepare_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedCorpus {
    /// Manifest over the cached files with every split pinned.
    pub manifest: PathBuf,
    pub registry: PathBuf,
    pub splits: PathBuf,
    pub config: PathBuf,
    pub n_utterances: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryFile {
    pub speakers: Vec<String>,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Test => "test",
    }
}

/// Loads `manifest`, resamples and peak-normalizes every file, and writes
/// under `out_dir`: `audio/NNNNN.wav` (float32, model rate), rescaled
/// `.phn` alignments, `manifest.jsonl`, `registry.json`, `splits.tsv` and
/// the run configuration.
pub fn prepare_corpus(manifest: &Path, out_dir: &Path, config: &RunConfig) -> Result<PreparedCorpus> {
    let m = load_manifest(manifest, config.seed, config.data.train_fraction)?;
    let data = Dataset::load(&m)?;
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;

    let mut rows = String::new();
    let mut splits = String::from("split\tspeaker\tcached\tsource\n");
    for (i, (u, rec)) in data.utterances.iter().zip(&m.records).enumerate() {
        let wav = format!("audio/{i:05}.wav");
        u.waveform.write_f32(out_dir.join(&wav))?;
        let alignment = match &u.alignment {
            Some(a) => {
                let phn = format!("audio/{i:05}.phn");
                let p = out_dir.join(&phn);
                std::fs::write(&p, a.to_text()).map_err(|e| Error::io(&p, e))?;
                Some(phn)
            }
            None => None,
        };
        let speaker = m.registry.names()[u.speaker].clone();
        splits.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            split_name(u.split),
            speaker,
            wav,
            rec.audio_path.display()
        ));
        let row = ManifestRow {
            path: wav,
            speaker,
            alignment,
            split: Some(split_name(u.split).into()),
        };
        rows.push_str(&serde_json::to_string(&row)?);
        rows.push('\n');
    }

    let write = |name: &str, text: String| -> Result<PathBuf> {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let registry = RegistryFile {
        speakers: m.registry.names().to_vec(),
    };
    Ok(PreparedCorpus {
        manifest: write("manifest.jsonl", rows)?,
        registry: write("registry.json", serde_json::to_string_pretty(&registry)? + "\n")?,
        splits: write("splits.tsv", splits)?,
        config: write("config.toml", config.to_toml_string()?)?,
        n_utterances: data.utterances.len(),
    })
}
