//! Waveform container, WAV codec and band-limited resampling.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate every model stage runs at.
pub const MODEL_SAMPLE_RATE: u32 = 22050;

/// Peak level utterances are normalized to when ingested.
pub const PEAK_LEVEL: f32 = 0.95;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Argument("waveform must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Argument(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }

    /// Scales so the absolute maximum equals `level`. Silent input is returned unchanged.
    pub fn peak_normalized(mut self, level: f32) -> Self {
        let peak = self.peak();
        if peak > 0.0 {
            let gain = level / peak;
            for s in &mut self.samples {
                *s = (*s * gain).clamp(-1.0, 1.0);
            }
        }
        self
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_wav(&bytes).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))
    }

    pub fn write_pcm16(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, encode_wav(self, WavEncoding::Pcm16)?).map_err(|e| Error::io(path, e))
    }

    pub fn write_f32(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, encode_wav(self, WavEncoding::Float32)?)
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Decodes a RIFF/WAVE byte buffer. Integer PCM of any depth and 32-bit float are
/// accepted; multichannel audio is down-mixed by averaging.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Wav(e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav("zero channels".into()));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Wav(format!(
                    "unsupported float depth {}",
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Wav(e.to_string()))?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if bits == 0 || bits > 32 {
                return Err(Error::Wav(format!("unsupported integer depth {bits}")));
            }
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Wav(e.to_string()))?
        }
    };
    let frames = interleaved.len() / channels;
    let samples: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|f| f.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    debug_assert_eq!(samples.len(), frames);
    Waveform::new(samples, spec.sample_rate).map_err(|e| Error::Wav(e.to_string()))
}

pub fn encode_wav(w: &Waveform, encoding: WavEncoding) -> Result<Vec<u8>> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut writer =
            hound::WavWriter::new(&mut buf, spec).map_err(|e| Error::Wav(e.to_string()))?;
        for &s in &w.samples {
            let r = match encoding {
                WavEncoding::Pcm16 => {
                    writer.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)
                }
                WavEncoding::Float32 => writer.write_sample(s),
            };
            r.map_err(|e| Error::Wav(e.to_string()))?;
        }
        writer.finalize().map_err(|e| Error::Wav(e.to_string()))?;
    }
    Ok(buf.into_inner())
}

/// Zero crossings of the interpolation kernel on each side, at the output cutoff.
const SINC_ZERO_CROSSINGS: f64 = 16.0;

/// Windowed-sinc resampling. Equal rates return the input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Argument("target rate must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let ratio = target_rate as f64 / w.sample_rate as f64;
    let out_len = ((w.len() as f64 * ratio).round() as usize).max(1);
    // Cutoff relative to the input Nyquist; anti-aliasing when downsampling.
    let cutoff = ratio.min(1.0);
    let half_width = SINC_ZERO_CROSSINGS / cutoff;
    let x = &w.samples;
    let n_in = x.len() as isize;
    let samples = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil() as isize;
            let hi = (t + half_width).floor() as isize;
            let mut acc = 0.0f64;
            for i in lo.max(0)..=hi.min(n_in - 1) {
                let d = t - i as f64;
                let window = 0.5 * (1.0 + (std::f64::consts::PI * d / half_width).cos());
                acc += x[i as usize] as f64 * cutoff * sinc(cutoff * d) * window;
            }
            acc as f32
        })
        .collect();
    Waveform::new(samples, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}
