//! Griffin-Lim phase reconstruction from a log-Mel spectrogram.
//!
//! The Mel filterbank is pseudo-inverted by its transpose with per-channel
//! normalization; the iterations then run on the full padded signal so the
//! overlap-add inverse is an exact least-squares STFT inverse.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::Waveform;
use crate::error::Result;
use crate::melfront::{mel_filterbank, MelFrontConfig, MelSpectrogram};

/// Linear-frequency magnitudes (`n_freqs x T`) from a log-Mel matrix.
///
/// Each Mel energy is divided by its filter's total weight (the average
/// magnitude under the filter), then spread back to the bins it covers as a
/// filter-weighted average. Entries at the floor map to zero.
pub fn mel_to_linear(mel: &MelSpectrogram, cfg: &MelFrontConfig) -> Array2<f64> {
    let fb = mel_filterbank(cfg);
    let row_sums: Vec<f64> = fb.rows().into_iter().map(|r| r.sum()).collect();
    let col_sums: Vec<f64> = fb.columns().into_iter().map(|c| c.sum()).collect();
    let floor_log = cfg.floor.ln();
    let n_frames = mel.n_frames();
    let mut avg = Array2::<f64>::zeros((cfg.n_mels, n_frames));
    for m in 0..cfg.n_mels {
        for t in 0..n_frames {
            let v = mel.values[[m, t]] as f64;
            if v > floor_log + 1e-6 && row_sums[m] > 0.0 {
                avg[[m, t]] = v.exp() / row_sums[m];
            }
        }
    }
    let mut lin = fb.t().dot(&avg);
    for (k, mut row) in lin.rows_mut().into_iter().enumerate() {
        if col_sums[k] > 0.0 {
            row.mapv_inplace(|v| v / col_sums[k]);
        } else {
            row.fill(0.0);
        }
    }
    lin
}

struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Stft {
    fn new(cfg: &MelFrontConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft: cfg.n_fft,
            hop: cfg.hop,
            window: cfg.window(),
            forward: planner.plan_fft_forward(cfg.n_fft),
            inverse: planner.plan_fft_inverse(cfg.n_fft),
        }
    }

    fn n_freqs(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Uncentered frames at `t * hop` of a signal of length `(T-1) * hop + n_fft`.
    fn analyze(&self, x: &[f64], n_frames: usize) -> Array2<Complex<f64>> {
        let mut out = Array2::from_elem((self.n_freqs(), n_frames), Complex::new(0.0, 0.0));
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..n_frames {
            for (n, slot) in buf.iter_mut().enumerate() {
                *slot = Complex::new(x[t * self.hop + n] * self.window[n], 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..self.n_freqs() {
                out[[k, t]] = buf[k];
            }
        }
        out
    }

    /// Least-squares inverse: windowed overlap-add divided by the summed squared window.
    fn synthesize(&self, spec: &Array2<Complex<f64>>) -> Vec<f64> {
        let n_frames = spec.ncols();
        let len = (n_frames - 1) * self.hop + self.n_fft;
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for t in 0..n_frames {
            for k in 0..self.n_freqs() {
                buf[k] = spec[[k, t]];
            }
            for k in self.n_freqs()..self.n_fft {
                buf[k] = spec[[self.n_fft - k, t]].conj();
            }
            self.inverse.process(&mut buf);
            for n in 0..self.n_fft {
                let w = self.window[n];
                acc[t * self.hop + n] += w * buf[n].re / self.n_fft as f64;
                norm[t * self.hop + n] += w * w;
            }
        }
        acc.iter()
            .zip(&norm)
            .map(|(a, n)| if *n > 1e-10 { a / n } else { 0.0 })
            .collect()
    }
}

fn spectral_convergence(spec: &Array2<Complex<f64>>, target: &Array2<f64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, s) in spec.iter().zip(target.iter()) {
        num += (c.norm() - s).powi(2);
        den += s * s;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Reconstructs a waveform of `hop * T` samples. Returns the waveform and the
/// spectral convergence `|| |STFT(x_i)| - S || / ||S||` after every iteration.
pub fn griffin_lim_with_trace(
    mel: &MelSpectrogram,
    cfg: &MelFrontConfig,
    n_iters: usize,
) -> Result<(Waveform, Vec<f64>)> {
    let target = mel_to_linear(mel, cfg);
    let n_frames = mel.n_frames();
    let stft = Stft::new(cfg);
    let mut spec = target.mapv(|m| Complex::new(m, 0.0));
    let mut x = stft.synthesize(&spec);
    let mut trace = Vec::with_capacity(n_iters);
    for _ in 0..n_iters.max(1) {
        let est = stft.analyze(&x, n_frames);
        for ((s, e), m) in spec.iter_mut().zip(est.iter()).zip(target.iter()) {
            let mag = e.norm();
            *s = if mag > 1e-12 { e * (*m / mag) } else { Complex::new(*m, 0.0) };
        }
        x = stft.synthesize(&spec);
        trace.push(spectral_convergence(&stft.analyze(&x, n_frames), &target));
    }
    let start = cfg.n_fft / 2;
    let samples: Vec<f32> = x[start..start + n_frames * cfg.hop]
        .iter()
        .map(|&v| v.clamp(-1.0, 1.0) as f32)
        .collect();
    Ok((Waveform::new(samples, cfg.sample_rate)?, trace))
}

pub fn griffin_lim(mel: &MelSpectrogram, cfg: &MelFrontConfig, n_iters: usize) -> Result<Waveform> {
    Ok(griffin_lim_with_trace(mel, cfg, n_iters)?.0)
}
