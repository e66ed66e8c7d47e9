mod common;

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use common::{random_signal, smoke_config, tiny_config, tiny_melfront};
use fastvc::audio::Waveform;
use fastvc::checkpoint::Checkpoint;
use fastvc::corpus::SpeakerRegistry;
use fastvc::melfront::{magnitude_stft, reference_logmel, LearnableMelFront, MelFrontConfig, MelSpectrogram};
use fastvc::model::{causal_upsample, downsample_time, one_hot_batch, Autoencoder, AutoencoderConfig, BottleneckConfig, LatentCodes, SpeakerEmbedding};
use fastvc::pipeline::{FastVc, VocoderKind};
use fastvc::probes::{
    bench_rtf, log_spectral_distance, mel_cepstral_distortion, mel_frame_l2, mel_l2, objective_eval,
    speaker_independence_report, split_labeled, train_phoneme_probe, ExternalScorer, LabeledCode, ProbeConfig,
    SpeakerCodes,
};
use fastvc::synth::{synthetic_dataset, SynthConfig};
use fastvc::training::{stage1_loss, train_stage1, train_stage2, MetricsLog};
use fastvc::vocoder::{griffin_lim, Generator, GeneratorConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Criteria run one at a time so wall-clock bounds are not shared with
// other tests in this binary.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// One line per criterion, written past the test harness capture.
fn report(n: u32, name: &str, pass: bool, detail: String) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance] criterion {n:>2} {verdict} {name}: {detail}");
    pass
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

struct SmokeRun {
    log: MetricsLog,
    checkpoints: Vec<Vec<u8>>,
    secs: f64,
}

fn run_smoke() -> SmokeRun {
    let cfg = smoke_config();
    let data = synthetic_dataset(&SynthConfig::default()).unwrap();
    let start = Instant::now();
    let mut checkpoints = Vec::new();
    let trainer = train_stage1(&data, &cfg, |ck| {
        checkpoints.push(ck.to_bytes()?);
        Ok(())
    })
    .unwrap();
    SmokeRun {
        log: trainer.log().clone(),
        checkpoints,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn smoke_run() -> &'static SmokeRun {
    static RUN: OnceLock<SmokeRun> = OnceLock::new();
    RUN.get_or_init(run_smoke)
}

fn smoke_model() -> (FastVc, Checkpoint) {
    let ck = Checkpoint::from_bytes(smoke_run().checkpoints.last().unwrap()).unwrap();
    (FastVc::from_checkpoint(&ck).unwrap(), ck)
}

#[test]
fn criterion_01_front_end_exactness() {
    let _g = serial();
    let start = Instant::now();
    let cfg = MelFrontConfig::default();
    let mf = LearnableMelFront::init_from_reference(&cfg, DType::F32).unwrap();
    let mut worst = 0.0f32;
    for seed in 0..50 {
        let w = Waveform::new(random_signal(cfg.sample_rate as usize, seed), cfg.sample_rate).unwrap();
        let learned = mf.logmel(&w).unwrap();
        let reference = reference_logmel(&w, &cfg).unwrap();
        assert_eq!(learned.values.dim(), reference.values.dim());
        for (a, b) in learned.values.iter().zip(&reference.values) {
            worst = worst.max((a - b).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 60.0;
    report(1, "front-end exactness", pass, format!("max abs diff {worst:.3e} over 50 waves in {secs:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_02_gradient_checks() {
    let _g = serial();
    let start = Instant::now();
    let mcfg = tiny_melfront();
    let mf = LearnableMelFront::init_from_reference(&mcfg, DType::F64).unwrap();
    let wave = common::randn(&[2, 96], 3, 0.8);
    let target = common::randn(&[2, 6, 12], 4, 1.0);
    let mel_loss = || (mf.forward(&wave).unwrap() - &target).unwrap().sqr().unwrap().mean_all().unwrap();
    let mel_err = common::gradcheck(mf.store(), &mf.store().names(), mel_loss, 1e-6);

    let acfg = AutoencoderConfig {
        n_mels: 6,
        kernel: 3,
        enc_conv_layers: 2,
        dec_conv_layers: 1,
        dec_rnn2_layers: 1,
        postnet_layers: 2,
        ..AutoencoderConfig::tiny(8)
    };
    let ae = Autoencoder::new(&acfg, &BottleneckConfig { d: 4, k: 4 }, 2, DType::F64, 9).unwrap();
    let mel = common::randn(&[2, 6, 16], 5, 2.0);
    let s = one_hot_batch(&[0, 1], 2, DType::F64).unwrap();
    let ae_loss = || stage1_loss(&ae, &mel, &s).unwrap().total;
    let enc_err = common::gradcheck(ae.store(), &ae.encoder_param_names(), ae_loss, 1e-6);

    let worst = |e: &[(String, f64)]| e.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    let (wm, we) = (worst(&mel_err), worst(&enc_err));
    let secs = start.elapsed().as_secs_f64();
    let pass = wm < 1e-3 && we < 1e-3 && !enc_err.is_empty() && secs < 300.0;
    report(
        2,
        "gradient checks",
        pass,
        format!("melfront {wm:.2e}, encoder ({} tensors) {we:.2e}, {secs:.1}s", enc_err.len()),
    );
    assert!(pass, "melfront {mel_err:?}\nencoder {enc_err:?}");
}

#[test]
fn criterion_03_bottleneck_algebra() {
    let _g = serial();
    let start = Instant::now();
    let mut failures = Vec::new();
    for k in [1usize, 2, 4, 32] {
        for t in 1..200usize {
            let frames: Vec<f32> = (0..2 * t).map(|i| i as f32).collect();
            let h = Tensor::from_vec(frames, (1, 2, t), &Device::Cpu).unwrap();
            let down = downsample_time(&h, k).unwrap();
            let n = down.dim(2).unwrap();
            if n != (t + k - 1) / k {
                failures.push(format!("downsample T={t} k={k}: {n} frames"));
            }
            let codes: Vec<f32> = (0..n).map(|j| j as f32).collect();
            let c = Tensor::from_vec(codes, (1, 1, n), &Device::Cpu).unwrap();
            let up: Vec<f32> = causal_upsample(&c, k, t).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            if up.len() != t || up.iter().enumerate().any(|(i, &v)| v != (i / k) as f32) {
                failures.push(format!("upsample T={t} k={k}"));
            }
            if k == 1 {
                let back = causal_upsample(&down, 1, t).unwrap();
                let diff: f32 = (back - &h).unwrap().abs().unwrap().sum_all().unwrap().to_scalar().unwrap();
                if diff != 0.0 {
                    failures.push(format!("k=1 round trip T={t}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    report(3, "bottleneck algebra", pass, format!("796 cases, {} failures, {secs:.1}s", failures.len()));
    assert!(pass, "{failures:?}");
}

/// Mean per-frame L2 of same-speaker reconstructions, of silence, and of
/// the change caused by swapping the target speaker.
fn smoke_distances(model: &FastVc) -> (f64, f64, f64) {
    let data = synthetic_dataset(&SynthConfig::default()).unwrap();
    let n_spk = model.registry.len();
    let (mut identity, mut silence, mut conversion) = (0.0, 0.0, 0.0);
    for u in &data.utterances {
        let x = model.melfront.logmel(&u.waveform).unwrap();
        let zeros = Waveform::new(vec![0.0; u.waveform.len()], u.waveform.sample_rate).unwrap();
        let z = model.melfront.logmel(&zeros).unwrap();
        let me = SpeakerEmbedding::new(u.speaker, n_spk).unwrap();
        let other = SpeakerEmbedding::new((u.speaker + 1) % n_spk, n_spk).unwrap();
        let same = model.autoencoder.convert_mel(&x, &me, &me).unwrap();
        let converted = model.autoencoder.convert_mel(&x, &me, &other).unwrap();
        identity += mel_frame_l2(&x, &same).unwrap();
        silence += mel_frame_l2(&x, &z).unwrap();
        conversion += mel_frame_l2(&same, &converted).unwrap();
    }
    let n = data.utterances.len() as f64;
    (identity / n, silence / n, conversion / n)
}

#[test]
fn criterion_04_overfit_smoke() {
    let _g = serial();
    let run = smoke_run();
    let total = run.log.series("total");
    let (model, _) = smoke_model();
    let (identity, silence, _) = smoke_distances(&model);
    let loss_ratio = total.last().unwrap() / total[0];
    let id_ratio = identity / silence;
    let pass = total.len() == 200 && loss_ratio < 0.1 && id_ratio < 0.1 && run.secs < 600.0;
    report(
        4,
        "overfit smoke test",
        pass,
        format!(
            "{} steps, loss {:.3} -> {:.3} (ratio {loss_ratio:.4}), identity L2 {identity:.3} vs silence {silence:.3} (ratio {id_ratio:.4}), {:.1}s",
            total.len(),
            total[0],
            total.last().unwrap(),
            run.secs
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_05_speaker_conditioning() {
    let _g = serial();
    let (model, _) = smoke_model();
    let (identity, _, conversion) = smoke_distances(&model);
    let ratio = conversion / identity;
    let pass = ratio > 10.0;
    report(
        5,
        "speaker-conditioning efficacy",
        pass,
        format!("conversion change {conversion:.3} vs same-speaker residual {identity:.3} (ratio {ratio:.2}, need > 10)"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_stage2_smoke() {
    let _g = serial();
    let (_, ck) = smoke_model();
    let cfg = smoke_config();
    let data = synthetic_dataset(&SynthConfig::default()).unwrap();
    let start = Instant::now();
    let trainer = train_stage2(&data, &cfg, Some(&ck), |_| Ok(())).unwrap();
    let log = trainer.log();
    let steps = trainer.step();
    let finite = log.rows().iter().all(|r| r.value.is_finite());
    let content = log.series("g_content_weighted");
    let adversarial = log.series("g_adversarial");
    let tail = |v: &[f64]| {
        let t = &v[v.len().saturating_sub(50)..];
        t.iter().sum::<f64>() / t.len().max(1) as f64
    };
    let (c, a) = (tail(&content), tail(&adversarial));
    let ratio = c.abs().max(1e-12) / a.abs().max(1e-12);
    let pass = steps == 200 && finite && (0.1..=10.0).contains(&ratio);
    report(
        6,
        "stage-2 smoke",
        pass,
        format!(
            "{steps} alternations, finite {finite}, last-50 means: content x20 {c:.4}, adversarial {a:.4} (ratio {ratio:.2}), {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_phoneme_probe_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let n_classes = 20;
    let mut items = Vec::new();
    for c in 0..n_classes {
        // Class 0 is the clear majority so both baselines are well defined.
        let count = if c == 0 { 150 } else { 50 };
        for i in 0..count {
            let code: Vec<f32> = (0..n_classes)
                .map(|j| f32::from(u8::from(j == c)) + (0.05 * gauss(&mut rng)) as f32)
                .collect();
            items.push(LabeledCode {
                code,
                label: format!("c{c:02}"),
                utterance: format!("u{c}-{i}"),
                index: i,
            });
        }
    }
    let cfg = ProbeConfig {
        hidden: 64,
        max_epochs: 200,
        seed: 7,
        ..ProbeConfig::default()
    };
    let (train, val, test) = split_labeled(items, &cfg);
    let r = train_phoneme_probe(&train, &val, &test, &cfg).unwrap();

    let mut train_counts = std::collections::BTreeMap::new();
    for c in &train {
        *train_counts.entry(c.label.as_str()).or_insert(0usize) += 1;
    }
    let top = train_counts.values().copied().max().unwrap();
    let majority = train_counts.iter().find(|(_, &n)| n == top).map(|(l, _)| *l).unwrap();
    let expected_prior = test.iter().filter(|c| c.label == majority).count() as f64 / test.len() as f64;

    let pass = r.accuracy > 0.9 && r.baseline_prior == expected_prior && r.baseline_random == 1.0 / 20.0;
    report(
        7,
        "phoneme-probe oracle",
        pass,
        format!(
            "accuracy {:.4}, prior {:.4} (oracle {expected_prior:.4}, class {}), random {}",
            r.accuracy, r.baseline_prior, r.prior_class, r.baseline_random
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_speaker_probe_calibration() {
    let _g = serial();
    let n_spk = 8;
    let registry = SpeakerRegistry::from_names((0..n_spk).map(|i| format!("s{i}")));
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut codes = Vec::new();
    for spk in 0..n_spk {
        for u in 0..10 {
            let values = Array2::from_shape_fn((4, 25), |_| gauss(&mut rng) as f32);
            codes.push(SpeakerCodes {
                speaker: spk,
                utterance: format!("s{spk}-{u}"),
                codes: LatentCodes { values, code_rate: 10.0 },
            });
        }
    }
    let cfg = ProbeConfig {
        hidden: 32,
        max_epochs: 100,
        seed: 8,
        ..ProbeConfig::default()
    };
    let r = speaker_independence_report(&codes, &registry, &cfg).unwrap();
    let p = 1.0 / n_spk as f64;
    let sigma = (p * (1.0 - p) / r.n_test_codes as f64).sqrt();
    let z = (r.accuracy - p) / sigma;
    let pass = z.abs() <= 3.0 && r.chance == p;
    report(
        8,
        "speaker-probe calibration",
        pass,
        format!("accuracy {:.4} vs chance {p} over {} test codes ({z:+.2} sigma)", r.accuracy, r.n_test_codes),
    );
    assert!(pass);
}

#[test]
fn criterion_09_objective_identity() {
    let _g = serial();
    let cfg = MelFrontConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let pairs: Vec<(Waveform, Waveform)> = (0..20)
        .map(|i| {
            let len = rng.random_range(2048..12000);
            let w = Waveform::new(random_signal(len, 900 + i), cfg.sample_rate).unwrap();
            (w.clone(), w)
        })
        .collect();
    let mut worst = 0.0f64;
    for (a, b) in &pairs {
        let (ma, mb) = (reference_logmel(a, &cfg).unwrap(), reference_logmel(b, &cfg).unwrap());
        worst = worst
            .max(mel_l2(&ma, &mb).unwrap().abs())
            .max(mel_frame_l2(&ma, &mb).unwrap().abs())
            .max(mel_cepstral_distortion(&ma, &mb).unwrap().abs())
            .max(log_spectral_distance(&a.samples, &b.samples, &cfg).abs());
    }

    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("scorer.sh");
    std::fs::write(&script, "#!/bin/sh\necho 2.68\n").unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    }
    let scorer = ExternalScorer::new("scripted", &script);
    let table = objective_eval(&pairs, &cfg, Some(&scorer)).unwrap();
    let builtin_zero = ["mel_l2", "mcd", "lsd"]
        .iter()
        .all(|m| table.get(m).is_some_and(|s| s.values.len() == 20 && s.values.iter().all(|&v| v == 0.0)));
    let ext = table.get("scripted").unwrap();
    let verbatim = ext.available && ext.raw.len() == 20 && ext.raw.iter().all(|r| r == "2.68") && ext.mean == 2.68;
    let pass = worst == 0.0 && builtin_zero && verbatim;
    report(
        9,
        "objective harness identity",
        pass,
        format!("max built-in metric {worst:e}, table zeros {builtin_zero}, scorer raw {:?}", ext.raw.first()),
    );
    assert!(pass, "{table:?}");
}

#[test]
fn criterion_10_vocoder_contracts() {
    let _g = serial();
    let gen = Generator::new(&GeneratorConfig::tiny(16), 256, DType::F32, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut bad = Vec::new();
    for _ in 0..50 {
        let t = rng.random_range(1..=40usize);
        let mel = Tensor::zeros((1, 80, t), DType::F32, &Device::Cpu).unwrap();
        let len = gen.forward(&mel).unwrap().dim(1).unwrap();
        if len != 256 * t {
            bad.push((t, len));
        }
    }

    let cfg = MelFrontConfig::default();
    let sr = cfg.sample_rate as f64;
    let sine: Vec<f32> = (0..cfg.sample_rate as usize)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / sr).sin()) as f32)
        .collect();
    let w = Waveform::new(sine, cfg.sample_rate).unwrap();
    let mel: MelSpectrogram = reference_logmel(&w, &cfg).unwrap();
    let rec = griffin_lim(&mel, &cfg, 60).unwrap();
    let peak = |samples: &[f32]| {
        let mag = magnitude_stft(samples, &cfg);
        let per_bin: Vec<f64> = mag.rows().into_iter().map(|r| r.sum()).collect();
        per_bin.iter().enumerate().fold(0, |best, (i, v)| if *v > per_bin[best] { i } else { best })
    };
    let expected = (1000.0 * cfg.n_fft as f64 / sr).round() as usize;
    let (orig, got) = (peak(&w.samples), peak(&rec.samples));
    let pass = bad.is_empty() && got.abs_diff(orig) <= 1 && orig.abs_diff(expected) <= 1;
    report(
        10,
        "vocoder contracts",
        pass,
        format!("50 lengths ok {}, Griffin-Lim peak bin {got} vs original {orig} (1 kHz = bin {expected})", bad.is_empty()),
    );
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_11_rtf_benchmark() {
    let _g = serial();
    let cfg = tiny_config();
    let registry = SpeakerRegistry::from_names(["a", "b"]);
    let model = FastVc::new(&cfg, registry).unwrap();
    let sr = cfg.melfront.sample_rate;
    let w = Waveform::new(random_signal(10 * sr as usize, 110), sr).unwrap();
    let start = Instant::now();
    let r = bench_rtf(&w, &model, 3, VocoderKind::Neural).unwrap();
    let wall = start.elapsed().as_secs_f64();
    let stages: Vec<String> = r.stages.iter().map(|s| format!("{} {:.3}s", s.name, s.median_secs)).collect();
    let pass = r.stages.len() == 3 && r.total_secs < 60.0 && r.total_secs > 0.0;
    report(
        11,
        "RTF benchmark",
        pass,
        format!(
            "10 s audio in {:.3}s (rtf {:.2}; {}), bench wall {wall:.1}s, reference {} rtf {}",
            r.total_secs,
            r.rtf,
            stages.join(", "),
            r.reference.machine,
            r.reference.rtf
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_12_determinism() {
    let _g = serial();
    let first = smoke_run();
    let second = run_smoke();
    let logs_equal = first.log.to_csv() == second.log.to_csv();
    let ckpts_equal = first.checkpoints == second.checkpoints;
    let pass = logs_equal && ckpts_equal && !first.checkpoints.is_empty();
    report(
        12,
        "determinism",
        pass,
        format!(
            "loss logs identical {logs_equal} ({} rows), {} checkpoints identical {ckpts_equal}",
            first.log.rows().len(),
            first.checkpoints.len()
        ),
    );
    assert!(pass);
}
