//! Training checkpoints: a JSON header with the full run configuration and
//! speaker registry, followed by every parameter and optimizer moment as a
//! named float32 blob (see [`crate::archive`] for the byte layout).
//!
//! Blob names are prefixed by owner: `melfront.`, `ae.`, `vocoder.`, `disc.`,
//! `classifier.`, `ref.melfront.`, `ref.ae.` and `opt.<optimizer>.`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::config::RunConfig;
use crate::corpus::SpeakerRegistry;
use crate::error::{Error, Result};
use crate::nn::{Adam, Blob};

pub const CHECKPOINT_FORMAT: &str = "fastvc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Which training stage produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Freshly initialized, never trained.
    Init,
    /// Autoencoder reconstruction training.
    Ae,
    /// Vocoder-only adversarial training on reference Mel input.
    Vocoder,
    /// End-to-end adversarial training of the whole pipeline.
    E2e,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Init => "init",
            Stage::Ae => "ae",
            Stage::Vocoder => "vocoder",
            Stage::E2e => "e2e",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub format_version: u32,
    pub stage: Stage,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    pub seed: u64,
    pub registry: SpeakerRegistry,
    pub config: RunConfig,
    /// Step counter of every optimizer whose moments are stored.
    pub optimizers: BTreeMap<String, u64>,
}

impl CheckpointHeader {
    pub fn new(stage: Stage, epoch: u64, step: u64, registry: &SpeakerRegistry, config: &RunConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_VERSION,
            stage,
            epoch,
            step,
            seed: config.seed,
            registry: registry.clone(),
            config: config.clone(),
            optimizers: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    blobs: Vec<Blob>,
}

impl Checkpoint {
    /// Blobs are stored sorted by name; duplicate names are rejected.
    pub fn new(header: CheckpointHeader, mut blobs: Vec<Blob>) -> Result<Self> {
        blobs.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = blobs.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(Error::Checkpoint(format!("duplicate blob {}", w[0].name)));
        }
        Ok(Self { header, blobs })
    }

    pub fn blobs(&self) -> &[Blob] {
        &self.blobs
    }

    /// Blobs under `prefix`, in name order.
    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Blob> + Clone + 'a {
        self.blobs.iter().filter(move |b| b.name.starts_with(prefix))
    }

    pub fn has_section(&self, prefix: &str) -> bool {
        self.section(prefix).next().is_some()
    }

    /// Adds an optimizer's moments under `opt.<name>.` and records its step count.
    pub fn push_optimizer(&mut self, name: &str, opt: &Adam) -> Result<()> {
        let blobs = opt.state_blobs(&format!("opt.{name}."))?;
        self.header.optimizers.insert(name.to_string(), opt.steps());
        let mut all = std::mem::take(&mut self.blobs);
        all.extend(blobs);
        *self = Self::new(self.header.clone(), all)?;
        Ok(())
    }

    /// Restores an optimizer previously stored with [`Checkpoint::push_optimizer`].
    pub fn restore_optimizer(&self, name: &str, opt: &mut Adam) -> Result<()> {
        let steps = *self
            .header
            .optimizers
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no optimizer {name}")))?;
        let prefix = format!("opt.{name}.");
        opt.load_state(self.section(&prefix), &prefix, steps)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Archive::encode(&serde_json::to_vec(&self.header)?, &self.blobs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let archive = Archive::decode(bytes)?;
        let header: CheckpointHeader = archive.header_json()?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("not a checkpoint: format {:?}", header.format)));
        }
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.format_version
            )));
        }
        header.config.validate()?;
        if archive.blobs.windows(2).any(|w| w[0].name >= w[1].name) {
            return Err(Error::Checkpoint("blobs are not in name order".into()));
        }
        Ok(Self {
            header,
            blobs: archive.blobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Prefixes every blob name.
pub fn prefixed(prefix: &str, blobs: Vec<Blob>) -> Vec<Blob> {
    blobs
        .into_iter()
        .map(|mut b| {
            b.name = format!("{prefix}{}", b.name);
            b
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let registry = SpeakerRegistry::from_ordered(vec!["zed".into(), "amy".into()]).unwrap();
        let header = CheckpointHeader::new(Stage::Ae, 3, 30, &registry, &RunConfig::default());
        let blobs = vec![
            Blob {
                name: "ae.w".into(),
                shape: vec![2],
                data: vec![1.0, 2.0],
            },
            Blob {
                name: "ae.a".into(),
                shape: vec![1, 1],
                data: vec![-0.5],
            },
        ];
        Checkpoint::new(header, blobs).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_stable() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.header.registry.names(), ["zed", "amy"]);
    }

    #[test]
    fn blobs_are_name_sorted() {
        let ck = sample();
        let names: Vec<&str> = ck.blobs().iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["ae.a", "ae.w"]);
    }

    #[test]
    fn foreign_archives_are_rejected() {
        let bytes = Archive::encode(br#"{"format":"other"}"#, &[]).unwrap();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
