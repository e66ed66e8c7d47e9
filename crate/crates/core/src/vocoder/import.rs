//! Exchange format for pretrained vocoder weights.
//!
//! A vocoder archive is an [`Archive`] whose JSON header names the format,
//! optionally records the generator configuration, and maps external
//! parameter names onto the generator's own names. Parameters absent from
//! the map keep their name.

use std::collections::BTreeMap;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::Blob;

use super::{Generator, GeneratorConfig};

pub const VOCODER_FORMAT: &str = "fastvc-vocoder";
const VOCODER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocoderArchiveHeader {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub names: BTreeMap<String, String>,
}

/// Loads a generator for `cfg` from archive bytes.
///
/// Fails when the archive's declared configuration differs from `cfg`, when a
/// parameter is missing or unexpected, or when a shape disagrees.
pub fn import_vocoder(bytes: &[u8], cfg: &GeneratorConfig, hop: usize, dtype: DType) -> Result<Generator> {
    let archive = Archive::decode(bytes)?;
    let header: VocoderArchiveHeader = archive.header_json()?;
    if header.format != VOCODER_FORMAT {
        return Err(Error::Checkpoint(format!("not a vocoder archive: format {:?}", header.format)));
    }
    if header.version != VOCODER_VERSION {
        return Err(Error::Checkpoint(format!("unsupported vocoder archive version {}", header.version)));
    }
    if let Some(declared) = &header.generator {
        if declared != cfg {
            return Err(Error::Config(format!(
                "vocoder archive was built for {declared:?}, configuration asks for {cfg:?}"
            )));
        }
    }
    let renamed: Vec<Blob> = archive
        .blobs
        .into_iter()
        .map(|mut b| {
            if let Some(internal) = header.names.get(&b.name) {
                b.name = internal.clone();
            }
            b
        })
        .collect();
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = renamed.iter().find(|b| !seen.insert(b.name.as_str())) {
        return Err(Error::Checkpoint(format!("two archive entries map to {}", dup.name)));
    }
    let generator = Generator::new(cfg, hop, dtype, 0)?;
    generator.store().load_blobs(&renamed, "")?;
    Ok(generator)
}

/// Writes a generator in the exchange format with internal names.
pub fn export_vocoder(generator: &Generator) -> Result<Vec<u8>> {
    let header = VocoderArchiveHeader {
        format: VOCODER_FORMAT.into(),
        version: VOCODER_VERSION,
        generator: Some(generator.config().clone()),
        names: BTreeMap::new(),
    };
    Archive::encode(&serde_json::to_vec(&header)?, &generator.store().to_blobs()?)
}
