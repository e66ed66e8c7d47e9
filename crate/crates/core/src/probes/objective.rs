use std::f64::consts::{LN_10, PI};
use std::path::PathBuf;
use std::process::Command;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::{self, Waveform};
use crate::error::{Error, Result};
use crate::melfront::{magnitude_stft, reference_logmel, MelFrontConfig, MelSpectrogram};

use super::report::{Report, TextTable};

/// Mel-cepstral coefficients compared by [`mel_cepstral_distortion`]; the
/// energy term `c0` is left out.
pub const MCD_COEFFS: usize = 13;
const LSD_EPS: f64 = 1e-10;

fn common_frames(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<usize> {
    if a.n_mels() != b.n_mels() {
        return Err(Error::Shape(format!("{} vs {} Mel bands", a.n_mels(), b.n_mels())));
    }
    Ok(a.n_frames().min(b.n_frames()))
}

/// Mean squared difference of two log-Mel matrices over all elements of the
/// common frames.
pub fn mel_l2(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    let t = common_frames(a, b)?;
    if t == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for m in 0..a.n_mels() {
        for f in 0..t {
            let d = a.values[[m, f]] as f64 - b.values[[m, f]] as f64;
            acc += d * d;
        }
    }
    Ok(acc / (a.n_mels() * t) as f64)
}

/// Mean over frames of the Euclidean distance between Mel frames.
pub fn mel_frame_l2(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    let t = common_frames(a, b)?;
    if t == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for f in 0..t {
        let mut s = 0.0;
        for m in 0..a.n_mels() {
            let d = a.values[[m, f]] as f64 - b.values[[m, f]] as f64;
            s += d * d;
        }
        acc += s.sqrt();
    }
    Ok(acc / t as f64)
}

/// Orthonormal DCT-II of every column, rows `1..=n_coeffs`.
fn mel_cepstrum(m: &MelSpectrogram, n_coeffs: usize) -> Array2<f64> {
    let n = m.n_mels();
    let rows = n_coeffs.min(n.saturating_sub(1));
    let mut out = Array2::zeros((rows, m.n_frames()));
    let scale = (2.0 / n as f64).sqrt();
    for q in 0..rows {
        let k = q + 1;
        let basis: Vec<f64> = (0..n)
            .map(|i| scale * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos())
            .collect();
        for (f, col) in m.values.axis_iter(Axis(1)).enumerate() {
            out[[q, f]] = col.iter().zip(&basis).map(|(&v, b)| v as f64 * b).sum();
        }
    }
    out
}

/// `(10 / ln 10) * sqrt(2 * sum_k (c_k - c'_k)^2)` over cepstral coefficients
/// `1..=13` of the log-Mel frames, averaged over frames, in dB.
pub fn mel_cepstral_distortion(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    let t = common_frames(a, b)?;
    if t == 0 {
        return Ok(0.0);
    }
    let ca = mel_cepstrum(a, MCD_COEFFS);
    let cb = mel_cepstrum(b, MCD_COEFFS);
    let k = 10.0 / LN_10;
    let mut acc = 0.0;
    for f in 0..t {
        let s: f64 = (0..ca.nrows()).map(|q| (ca[[q, f]] - cb[[q, f]]).powi(2)).sum();
        acc += k * (2.0 * s).sqrt();
    }
    Ok(acc / t as f64)
}

/// Root-mean-square difference of `10 log10(power + 1e-10)` spectra per
/// frame, averaged over frames, in dB.
pub fn log_spectral_distance(a: &[f32], b: &[f32], cfg: &MelFrontConfig) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let db = |s: &[f32]| magnitude_stft(&s[..n], cfg).mapv(|m| 10.0 * (m * m + LSD_EPS).log10());
    let (sa, sb) = (db(a), db(b));
    let frames = sa.ncols();
    let mut acc = 0.0;
    for f in 0..frames {
        let ms: f64 = sa.column(f).iter().zip(sb.column(f)).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            / sa.nrows() as f64;
        acc += ms.sqrt();
    }
    acc / frames as f64
}

/// Scorer executable called as `program [args..] ref.wav deg.wav`; it must
/// print one decimal number and exit 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalScorer {
    pub name: String,
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl ExternalScorer {
    pub fn new(name: impl Into<String>, program: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            program: program.into(),
            args: Vec::new(),
        }
    }

    /// Scores one pair, returning the trimmed stdout and its parsed value.
    pub fn score(&self, reference: &Waveform, degraded: &Waveform) -> Result<(String, f64)> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let ref_path = dir.path().join("ref.wav");
        let deg_path = dir.path().join("deg.wav");
        reference.write_pcm16(&ref_path)?;
        degraded.write_pcm16(&deg_path)?;
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(&ref_path)
            .arg(&deg_path)
            .output()
            .map_err(|e| Error::io(&self.program, e))?;
        if !out.status.success() {
            return Err(Error::State(format!(
                "scorer {} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let raw = String::from_utf8_lossy(&out.stdout).trim().to_string();
        let value = raw
            .parse::<f64>()
            .map_err(|_| Error::State(format!("scorer {} printed {raw:?}, not a number", self.program.display())))?;
        Ok((raw, value))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub available: bool,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub values: Vec<f64>,
    /// Scorer output exactly as printed (external metrics only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MetricSummary {
    pub fn from_values(name: &str, values: Vec<f64>) -> Self {
        let n = values.len();
        let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self {
            name: name.to_string(),
            available: true,
            n,
            mean,
            std,
            values,
            raw: Vec::new(),
            note: None,
        }
    }

    pub fn unavailable(name: &str, note: String) -> Self {
        Self {
            available: false,
            note: Some(note),
            ..Self::from_values(name, Vec::new())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub n_pairs: usize,
    pub metrics: Vec<MetricSummary>,
}

impl MetricTable {
    pub fn get(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

impl Report for MetricTable {
    fn to_text(&self) -> String {
        let mut t = TextTable::new(&["metric", "mean", "std", "n"]);
        for m in &self.metrics {
            if m.available {
                t.row(&[m.name.clone(), format!("{:.4}", m.mean), format!("{:.4}", m.std), m.n.to_string()]);
            } else {
                t.row(&[m.name.clone(), "unavailable".into(), "-".into(), "0".into()]);
            }
        }
        t.render()
    }
}

fn at_rate(w: &Waveform, rate: u32) -> Result<Waveform> {
    if w.sample_rate == rate {
        Ok(w.clone())
    } else {
        audio::resample(w, rate)
    }
}

/// Truncates a `(reference, degraded)` pair to the shorter length; more than
/// one hop of difference is a pairing error.
pub fn pair_up(reference: &Waveform, degraded: &Waveform, cfg: &MelFrontConfig) -> Result<(Waveform, Waveform)> {
    let r = at_rate(reference, cfg.sample_rate)?;
    let d = at_rate(degraded, cfg.sample_rate)?;
    if r.len().abs_diff(d.len()) > cfg.hop {
        return Err(Error::Pairing(format!(
            "reference has {} samples, degraded {}; allowed difference is {}",
            r.len(),
            d.len(),
            cfg.hop
        )));
    }
    let n = r.len().min(d.len());
    let cut = |w: Waveform| Waveform::new(w.samples[..n].to_vec(), w.sample_rate);
    Ok((cut(r)?, cut(d)?))
}

/// Built-in spectral metrics over every pair (computed on the fixed reference
/// front end), plus the external scorer when given. A scorer failure on any
/// pair marks that metric unavailable with the reason in `note`.
pub fn objective_eval(
    pairs: &[(Waveform, Waveform)],
    cfg: &MelFrontConfig,
    scorer: Option<&ExternalScorer>,
) -> Result<MetricTable> {
    let mut l2 = Vec::with_capacity(pairs.len());
    let mut mcd = Vec::with_capacity(pairs.len());
    let mut lsd = Vec::with_capacity(pairs.len());
    let mut aligned = Vec::with_capacity(pairs.len());
    for (r, d) in pairs {
        let (r, d) = pair_up(r, d, cfg)?;
        let mr = reference_logmel(&r, cfg)?;
        let md = reference_logmel(&d, cfg)?;
        l2.push(mel_l2(&mr, &md)?);
        mcd.push(mel_cepstral_distortion(&mr, &md)?);
        lsd.push(log_spectral_distance(&r.samples, &d.samples, cfg));
        aligned.push((r, d));
    }
    let mut metrics = vec![
        MetricSummary::from_values("mel_l2", l2),
        MetricSummary::from_values("mcd", mcd),
        MetricSummary::from_values("lsd", lsd),
    ];
    if let Some(s) = scorer {
        let mut raw = Vec::new();
        let mut values = Vec::new();
        let mut failure = None;
        for (r, d) in &aligned {
            match s.score(r, d) {
                Ok((text, v)) => {
                    raw.push(text);
                    values.push(v);
                }
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            }
        }
        metrics.push(match failure {
            Some(note) => MetricSummary::unavailable(&s.name, note),
            None => MetricSummary {
                raw,
                ..MetricSummary::from_values(&s.name, values)
            },
        });
    }
    Ok(MetricTable {
        n_pairs: pairs.len(),
        metrics,
    })
}
