//! The assembled conversion system: front end, autoencoder and vocoder bound
//! to one speaker registry and run configuration.

use std::time::{Duration, Instant};

use candle_core::DType;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{self, Waveform, MODEL_SAMPLE_RATE, PEAK_LEVEL};
use crate::checkpoint::{prefixed, Checkpoint};
use crate::config::RunConfig;
use crate::corpus::SpeakerRegistry;
use crate::error::{Error, Result};
use crate::melfront::{LearnableMelFront, MelSpectrogram};
use crate::model::{Autoencoder, SpeakerEmbedding};
use crate::nn::Blob;
use crate::vocoder::{griffin_lim, Generator};

/// Independent seed for one model component, derived from the run seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub(crate) const AE_STREAM: u64 = 1;
pub(crate) const VOCODER_STREAM: u64 = 2;
pub(crate) const DISC_STREAM: u64 = 3;
pub(crate) const CLASSIFIER_STREAM: u64 = 4;

/// Waveform synthesis back end for conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocoderKind {
    Neural,
    GriffinLim { iters: usize },
}

/// Per-stage wall time of one conversion.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub melfront: Duration,
    pub autoencoder: Duration,
    pub vocoder: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.melfront + self.autoencoder + self.vocoder
    }
}

#[derive(Debug, Clone)]
pub struct Conversion {
    pub waveform: Waveform,
    pub mel: MelSpectrogram,
    pub timings: StageTimings,
}

pub struct FastVc {
    pub config: RunConfig,
    pub registry: SpeakerRegistry,
    pub melfront: LearnableMelFront,
    pub autoencoder: Autoencoder,
    pub vocoder: Generator,
}

impl FastVc {
    /// Fresh float32 model: the front end reproduces the reference Mel, the
    /// other modules are seeded from `config.seed`.
    pub fn new(config: &RunConfig, registry: SpeakerRegistry) -> Result<Self> {
        Self::with_dtype(config, registry, DType::F32)
    }

    pub fn with_dtype(config: &RunConfig, registry: SpeakerRegistry, dtype: DType) -> Result<Self> {
        config.validate()?;
        if registry.is_empty() {
            return Err(Error::Config("speaker registry is empty".into()));
        }
        let melfront = LearnableMelFront::init_from_reference(&config.melfront, dtype)?;
        let autoencoder = Autoencoder::new(
            &config.autoencoder,
            &config.bottleneck,
            registry.len(),
            dtype,
            sub_seed(config.seed, AE_STREAM),
        )?;
        let vocoder = Generator::new(
            &config.generator,
            config.melfront.hop,
            dtype,
            sub_seed(config.seed, VOCODER_STREAM),
        )?;
        Ok(Self {
            config: config.clone(),
            registry,
            melfront,
            autoencoder,
            vocoder,
        })
    }

    /// Rebuilds the model stored in a checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let h = &ckpt.header;
        let mut model = Self::with_dtype(&h.config, h.registry.clone(), DType::F32)?;
        model.load_params(ckpt.blobs())?;
        Ok(model)
    }

    /// Parameters under the `melfront.`, `ae.` and `vocoder.` prefixes.
    pub fn param_blobs(&self) -> Result<Vec<Blob>> {
        let mut out = prefixed("melfront.", self.melfront.store().to_blobs()?);
        out.extend(prefixed("ae.", self.autoencoder.store().to_blobs()?));
        out.extend(prefixed("vocoder.", self.vocoder.store().to_blobs()?));
        Ok(out)
    }

    pub fn load_params(&mut self, blobs: &[Blob]) -> Result<()> {
        self.melfront.load_blobs(blobs, "melfront.")?;
        self.autoencoder.store().load_blobs(blobs, "ae.")?;
        self.vocoder.store().load_blobs(blobs, "vocoder.")
    }

    pub fn speaker(&self, id: &str) -> Result<SpeakerEmbedding> {
        SpeakerEmbedding::for_speaker(&self.registry, id)
    }

    /// Resamples to the model rate and peak-normalizes, as the corpus loader does.
    pub fn prepare_input(w: &Waveform) -> Result<Waveform> {
        Ok(audio::resample(w, MODEL_SAMPLE_RATE)?.peak_normalized(PEAK_LEVEL))
    }

    /// Converts `w` (any sample rate) from `source` to `target`. The output is
    /// `hop * ceil(len / hop)` samples at the model rate.
    pub fn convert(&self, w: &Waveform, source: &str, target: &str, vocoder: VocoderKind) -> Result<Conversion> {
        let src = self.speaker(source)?;
        let tgt = self.speaker(target)?;
        let input = Self::prepare_input(w)?;
        let t0 = Instant::now();
        let mel = self.melfront.logmel(&input)?;
        let t1 = Instant::now();
        let converted = self.autoencoder.convert_mel(&mel, &src, &tgt)?;
        let t2 = Instant::now();
        let waveform = self.synthesize(&converted, vocoder)?;
        let t3 = Instant::now();
        Ok(Conversion {
            waveform,
            mel: converted,
            timings: StageTimings {
                melfront: t1 - t0,
                autoencoder: t2 - t1,
                vocoder: t3 - t2,
            },
        })
    }

    pub fn synthesize(&self, mel: &MelSpectrogram, vocoder: VocoderKind) -> Result<Waveform> {
        match vocoder {
            VocoderKind::Neural => self.vocoder.generate(mel, self.config.melfront.sample_rate),
            VocoderKind::GriffinLim { iters } => griffin_lim(mel, &self.config.melfront, iters),
        }
    }
}
