//! Log-Mel front end.
//!
//! [`reference_logmel`] is a fixed, non-trainable transform computed with an FFT
//! in double precision. [`LearnableMelFront`] computes the same transform as a
//! strided convolution with a windowed Fourier basis followed by a linear Mel
//! projection; both stages are trainable and initialized so that the two
//! transforms agree.

use std::f64::consts::PI;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::nn::{reflect_index, reflect_pad, Blob, Conv1d, ConvSpec, ParamStore};

/// Guard inside the magnitude square root so its gradient stays finite at zero.
const MAGNITUDE_GUARD: f64 = 1e-18;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelFrontConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub floor: f64,
    pub trainable: bool,
}

impl Default for MelFrontConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 1024,
            hop: 256,
            win: 1024,
            n_mels: 80,
            f_min: 0.0,
            f_max: 11025.0,
            floor: 1e-5,
            trainable: false,
        }
    }
}

impl MelFrontConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("melfront: {m}")));
        if self.sample_rate == 0 || self.n_mels == 0 || self.hop == 0 {
            return bad("sample_rate, n_mels and hop must be positive".into());
        }
        if !(self.hop <= self.win && self.win <= self.n_fft) {
            return bad(format!(
                "need hop <= win <= n_fft, got {} / {} / {}",
                self.hop, self.win, self.n_fft
            ));
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return bad(format!("need 0 <= f_min < f_max <= sr/2, got {} / {}", self.f_min, self.f_max));
        }
        if !(self.floor > 0.0) {
            return bad("floor must be positive".into());
        }
        Ok(())
    }

    pub fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// Frame count for `len` samples under centered framing.
    pub fn n_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Periodic Hann window of length `win`, zero-padded symmetrically to `n_fft`.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let offset = (self.n_fft - self.win) / 2;
        for i in 0..self.win {
            w[offset + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / self.win as f64).cos();
        }
        w
    }
}

/// `n_mels x T` log-Mel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f32>,
    pub frame_rate: f64,
    pub hop: usize,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// `(1, n_mels, T)` tensor.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let data: Vec<f32> = self.values.iter().copied().collect();
        Ok(Tensor::from_vec(data, (1, self.n_mels(), self.n_frames()), &candle_core::Device::Cpu)?
            .to_dtype(dtype)?)
    }

    /// Reads one batch item of a `(B, n_mels, T)` tensor.
    pub fn from_tensor(t: &Tensor, item: usize, frame_rate: f64, hop: usize) -> Result<Self> {
        let m = t.get(item)?.to_dtype(DType::F32)?;
        let (rows, cols) = m.dims2()?;
        let data = m.flatten_all()?.to_vec1::<f32>()?;
        let values = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            values,
            frame_rate,
            hop,
        })
    }
}

fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let logstep = 6.4f64.ln() / 27.0;
    if f >= min_log_hz {
        min_log_hz / f_sp + (f / min_log_hz).ln() / logstep
    } else {
        f / f_sp
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let min_log_hz = 1000.0;
    let min_log_mel = min_log_hz / f_sp;
    let logstep = 6.4f64.ln() / 27.0;
    if m >= min_log_mel {
        min_log_hz * (logstep * (m - min_log_mel)).exp()
    } else {
        f_sp * m
    }
}

/// Band edges on the Slaney Mel scale: `n_mels + 2` frequencies in Hz.
fn mel_edges(cfg: &MelFrontConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let n = cfg.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Center frequency of every Mel channel in Hz.
pub fn mel_center_frequencies(cfg: &MelFrontConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Triangular Slaney-style filterbank (`n_mels x n_freqs`) with area normalization.
pub fn mel_filterbank(cfg: &MelFrontConfig) -> Array2<f64> {
    let n_freqs = cfg.n_freqs();
    let edges = mel_edges(cfg);
    let freqs: Vec<f64> = (0..n_freqs)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, n_freqs));
    for m in 0..cfg.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (right - left);
        for (k, &f) in freqs.iter().enumerate() {
            let lower = (f - left) / (center - left);
            let upper = (right - f) / (right - center);
            fb[[m, k]] = lower.min(upper).max(0.0) * norm;
        }
    }
    fb
}

/// Magnitude STFT (`n_freqs x T`) with a Hann window and centered, reflect-padded frames.
pub fn magnitude_stft(samples: &[f32], cfg: &MelFrontConfig) -> Array2<f64> {
    let n_fft = cfg.n_fft;
    let half = n_fft / 2;
    let n_frames = cfg.n_frames(samples.len());
    let window = cfg.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut out = Array2::zeros((cfg.n_freqs(), n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..n_frames {
        for (n, slot) in buf.iter_mut().enumerate() {
            let pos = (t * cfg.hop + n) as isize - half as isize;
            let s = samples[reflect_index(pos, samples.len())] as f64;
            *slot = Complex::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        for k in 0..cfg.n_freqs() {
            out[[k, t]] = buf[k].norm();
        }
    }
    out
}

/// Fixed reference transform: magnitude STFT, Mel projection, `ln(max(., floor))`.
pub fn reference_logmel(w: &Waveform, cfg: &MelFrontConfig) -> Result<MelSpectrogram> {
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Argument(format!(
            "waveform at {} Hz, front end expects {} Hz",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let mag = magnitude_stft(&w.samples, cfg);
    let mel = mel_filterbank(cfg).dot(&mag);
    let values = mel.mapv(|v| v.max(cfg.floor).ln() as f32);
    Ok(MelSpectrogram {
        values,
        frame_rate: cfg.frame_rate(),
        hop: cfg.hop,
    })
}

/// Trainable front end: Fourier-basis convolution, magnitude, Mel projection, log.
pub struct LearnableMelFront {
    cfg: MelFrontConfig,
    store: ParamStore,
    analysis: Conv1d,
    mel_basis: Tensor,
    initialized: bool,
}

impl LearnableMelFront {
    /// Parameters set to the windowed Fourier basis and the Mel filterbank, so
    /// the output reproduces [`reference_logmel`].
    pub fn init_from_reference(cfg: &MelFrontConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let n_fft = cfg.n_fft;
        let n_freqs = cfg.n_freqs();
        let window = cfg.window();
        let mut basis = Vec::with_capacity(2 * n_freqs * n_fft);
        for part in 0..2 {
            for k in 0..n_freqs {
                for (n, wn) in window.iter().enumerate() {
                    let phase = 2.0 * PI * (k * n % n_fft) as f64 / n_fft as f64;
                    basis.push(if part == 0 { wn * phase.cos() } else { -wn * phase.sin() });
                }
            }
        }
        let fb = mel_filterbank(cfg);
        Self::build(cfg, dtype, basis, fb.iter().copied().collect(), true)
    }

    /// Zero-filled parameters awaiting [`LearnableMelFront::load_blobs`].
    pub fn uninitialized(cfg: &MelFrontConfig, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let basis = vec![0.0; 2 * cfg.n_freqs() * cfg.n_fft];
        let fb = vec![0.0; cfg.n_mels * cfg.n_freqs()];
        Self::build(cfg, dtype, basis, fb, false)
    }

    fn build(cfg: &MelFrontConfig, dtype: DType, basis: Vec<f64>, fb: Vec<f64>, initialized: bool) -> Result<Self> {
        let store = ParamStore::new(dtype, 0);
        let root = store.root();
        let n_freqs = cfg.n_freqs();
        let weight = root.param_values("analysis.weight", &[2 * n_freqs, 1, cfg.n_fft], basis)?;
        let mel_basis = root.param_values("mel_basis", &[cfg.n_mels, n_freqs], fb)?;
        let analysis = Conv1d::from_tensors(weight, None, ConvSpec::new(cfg.n_fft).stride(cfg.hop));
        Ok(Self {
            cfg: cfg.clone(),
            store,
            analysis,
            mel_basis,
            initialized,
        })
    }

    pub fn config(&self) -> &MelFrontConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn load_blobs<'b>(&mut self, blobs: impl IntoIterator<Item = &'b Blob>, prefix: &str) -> Result<()> {
        self.store.load_blobs(blobs, prefix)?;
        self.initialized = true;
        Ok(())
    }

    /// Independent copy with its own parameter storage.
    pub fn deep_copy(&self) -> Result<Self> {
        let store = self.store.deep_copy()?;
        let root = store.root();
        let n_freqs = self.cfg.n_freqs();
        let weight = root.param("analysis.weight", &[2 * n_freqs, 1, self.cfg.n_fft], crate::nn::Init::Const(0.0))?;
        let mel_basis = root.param("mel_basis", &[self.cfg.n_mels, n_freqs], crate::nn::Init::Const(0.0))?;
        Ok(Self {
            cfg: self.cfg.clone(),
            analysis: Conv1d::from_tensors(weight, None, self.analysis.spec()),
            mel_basis,
            store,
            initialized: self.initialized,
        })
    }

    /// `(B, L)` waveforms → `(B, n_mels, ceil(L / hop))` log-Mel.
    pub fn forward(&self, wave: &Tensor) -> Result<Tensor> {
        self.forward_with_floor(wave, self.cfg.floor)
    }

    pub fn forward_with_floor(&self, wave: &Tensor, floor: f64) -> Result<Tensor> {
        if !self.initialized {
            return Err(Error::State("mel front end parameters are not initialized".into()));
        }
        let (_, len) = wave.dims2()?;
        let n_freqs = self.cfg.n_freqs();
        let half = self.cfg.n_fft / 2;
        let x = reflect_pad(&wave.unsqueeze(1)?, half, half)?;
        let spec = self.analysis.forward(&x)?.narrow(2, 0, self.cfg.n_frames(len))?;
        let re = spec.narrow(1, 0, n_freqs)?;
        let im = spec.narrow(1, n_freqs, n_freqs)?;
        let mag = ((re.sqr()? + im.sqr()?)? + MAGNITUDE_GUARD)?.sqrt()?;
        let mel = self.mel_basis.broadcast_matmul(&mag)?;
        Ok(mel.maximum(floor)?.log()?)
    }

    pub fn logmel(&self, w: &Waveform) -> Result<MelSpectrogram> {
        if w.sample_rate != self.cfg.sample_rate {
            return Err(Error::Argument(format!(
                "waveform at {} Hz, front end expects {} Hz",
                w.sample_rate, self.cfg.sample_rate
            )));
        }
        let t = Tensor::from_vec(w.samples.clone(), (1, w.len()), &candle_core::Device::Cpu)?
            .to_dtype(self.store.dtype())?;
        MelSpectrogram::from_tensor(&self.forward(&t)?, 0, self.cfg.frame_rate(), self.cfg.hop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> MelFrontConfig {
        MelFrontConfig {
            n_fft: 64,
            win: 64,
            hop: 16,
            n_mels: 8,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(MelFrontConfig::default().validate().is_ok());
        let bad = MelFrontConfig {
            hop: 2048,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = MelFrontConfig {
            f_max: 20000.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn slaney_scale_round_trips() {
        for f in [0.0, 300.0, 999.0, 1000.0, 4000.0, 11025.0] {
            assert!((mel_to_hz(hz_to_mel(f)) - f).abs() < 1e-9);
        }
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn frame_count_is_ceil() {
        let cfg = MelFrontConfig::default();
        assert_eq!(cfg.n_frames(22050), 87);
        assert_eq!(cfg.n_frames(8192), 32);
        assert_eq!(cfg.n_frames(1), 1);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = MelFrontConfig::default();
        let w = Waveform::new(vec![0.0; 22050], 22050).unwrap();
        let m = reference_logmel(&w, &cfg).unwrap();
        let floor = (1e-5f64).ln() as f32;
        assert!(m.values.iter().all(|&v| v == floor));
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let w = Waveform::new(vec![0.0; 100], 16000).unwrap();
        assert!(reference_logmel(&w, &MelFrontConfig::default()).is_err());
    }

    #[test]
    fn analysis_bank_size() {
        let fe = LearnableMelFront::init_from_reference(&MelFrontConfig::default(), DType::F32).unwrap();
        let w = fe.store().get("analysis.weight").unwrap();
        assert_eq!(w.dims(), &[1026, 1, 1024]);
    }

    #[test]
    fn filterbank_rows_positive() {
        let fb = mel_filterbank(&MelFrontConfig::default());
        for row in fb.rows() {
            assert!(row.sum() > 0.0);
        }
    }

    #[test]
    fn uninitialized_forward_is_a_state_error() {
        let fe = LearnableMelFront::uninitialized(&small_cfg(), DType::F32).unwrap();
        let w = Waveform::new(vec![0.1; 100], 22050).unwrap();
        assert!(matches!(fe.logmel(&w), Err(Error::State(_))));
    }

    #[test]
    fn short_input_matches_reference() {
        let cfg = small_cfg();
        let fe = LearnableMelFront::init_from_reference(&cfg, DType::F64).unwrap();
        let w = Waveform::new((0..20).map(|i| ((i * 7) % 5) as f32 / 5.0 - 0.4).collect(), 22050).unwrap();
        let a = fe.logmel(&w).unwrap();
        let b = reference_logmel(&w, &cfg).unwrap();
        assert_eq!(a.n_frames(), 2);
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x - y).abs() < 1e-5);
        }
    }
}
