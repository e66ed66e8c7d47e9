use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::pipeline::{FastVc, StageTimings, VocoderKind};

use super::report::{Report, TextTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub median_secs: f64,
    pub samples: Vec<f64>,
}

/// Median of `samples` (mean of the middle two for an even count).
pub fn summarize_timings(name: &str, samples: Vec<f64>) -> StageTiming {
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median_secs = match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    };
    StageTiming {
        name: name.to_string(),
        median_secs,
        samples,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub cpu: String,
    pub logical_cpus: usize,
    pub os: String,
    pub arch: String,
}

pub fn machine_info() -> MachineInfo {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    MachineInfo {
        cpu,
        logical_cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        os: std::env::consts::OS.into(),
        arch: std::env::consts::ARCH.into(),
    }
}

/// Published figure for context; never compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub machine: String,
    pub rtf: f64,
}

impl Default for ReferencePoint {
    fn default() -> Self {
        Self {
            machine: "Intel(R) Core(TM) i7-8700K at 3.70GHz".into(),
            rtf: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfResult {
    pub audio_seconds: f64,
    pub repeats: usize,
    /// Front end, autoencoder, vocoder.
    pub stages: Vec<StageTiming>,
    /// Sum of the stage medians.
    pub total_secs: f64,
    /// `audio_seconds / total_secs`; above 1 is faster than real time.
    pub rtf: f64,
    pub machine: MachineInfo,
    pub vocoder: String,
    pub reference: ReferencePoint,
}

impl RtfResult {
    pub fn from_runs(audio_seconds: f64, runs: &[StageTimings], vocoder: &str) -> Self {
        let col = |f: fn(&StageTimings) -> Duration| runs.iter().map(|r| f(r).as_secs_f64()).collect::<Vec<_>>();
        let stages = vec![
            summarize_timings("melfront", col(|r| r.melfront)),
            summarize_timings("autoencoder", col(|r| r.autoencoder)),
            summarize_timings("vocoder", col(|r| r.vocoder)),
        ];
        let total_secs: f64 = stages.iter().map(|s| s.median_secs).sum();
        Self {
            audio_seconds,
            repeats: runs.len(),
            stages,
            total_secs,
            rtf: audio_seconds / total_secs,
            machine: machine_info(),
            vocoder: vocoder.to_string(),
            reference: ReferencePoint::default(),
        }
    }
}

impl Report for RtfResult {
    fn to_text(&self) -> String {
        let mut t = TextTable::new(&["stage", "median s"]);
        for s in &self.stages {
            t.row(&[s.name.clone(), format!("{:.4}", s.median_secs)]);
        }
        t.row(&["total".into(), format!("{:.4}", self.total_secs)]);
        t.row(&["audio s".into(), format!("{:.3}", self.audio_seconds)]);
        t.row(&["rtf".into(), format!("{:.3}", self.rtf)]);
        t.row(&["machine".into(), format!("{} ({} cpus)", self.machine.cpu, self.machine.logical_cpus)]);
        t.row(&[
            format!("reference: {}", self.reference.machine),
            format!("rtf {}", self.reference.rtf),
        ]);
        t.render()
    }
}

/// Converts `w` from the first registry speaker to itself `repeats` times
/// after one untimed warm-up run and reports per-stage medians.
pub fn bench_rtf(w: &Waveform, model: &FastVc, repeats: usize, vocoder: VocoderKind) -> Result<RtfResult> {
    if repeats < 3 {
        return Err(Error::Argument(format!("bench needs at least 3 repeats, got {repeats}")));
    }
    let speaker = model
        .registry
        .names()
        .first()
        .cloned()
        .ok_or_else(|| Error::Config("model has no speakers".into()))?;
    let audio_seconds = w.duration_secs();
    model.convert(w, &speaker, &speaker, vocoder)?;
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        runs.push(model.convert(w, &speaker, &speaker, vocoder)?.timings);
    }
    let name = match vocoder {
        VocoderKind::Neural => "neural".to_string(),
        VocoderKind::GriffinLim { iters } => format!("griffin-lim ({iters} iters)"),
    };
    Ok(RtfResult::from_runs(audio_seconds, &runs, &name))
}
