#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use fastvc::config::RunConfig;
use fastvc::melfront::MelFrontConfig;
use fastvc::model::{AutoencoderConfig, BottleneckConfig};
use fastvc::nn::ParamStore;
use fastvc::vocoder::{DiscriminatorConfig, GeneratorConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn smoke_config() -> RunConfig {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/smoke.toml");
    RunConfig::load(path.as_ref(), &[]).expect("smoke preset loads")
}

/// Everything shrunk for unit-speed tests.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.autoencoder = AutoencoderConfig {
        enc_conv_layers: 1,
        dec_conv_layers: 1,
        dec_rnn2_layers: 1,
        postnet_layers: 2,
        ..AutoencoderConfig::tiny(8)
    };
    cfg.bottleneck = BottleneckConfig { d: 4, k: 4 };
    cfg.generator = GeneratorConfig::tiny(16);
    cfg.discriminator = DiscriminatorConfig {
        n_scales: 2,
        base_channels: 2,
        max_channels: 8,
        n_downsample: 2,
        downsample_factor: 4,
    };
    cfg.stage1.batch_size = 2;
    cfg.stage1.chunk_len = 2048;
    cfg.stage1.epochs = 2;
    cfg.stage2.batch_size = 2;
    cfg.stage2.chunk_len = 2048;
    cfg.stage2.epochs = 2;
    cfg.vocoder_training.batch_size = 2;
    cfg.vocoder_training.chunk_len = 2048;
    cfg.vocoder_training.epochs = 2;
    cfg
}

pub fn tiny_melfront() -> MelFrontConfig {
    MelFrontConfig {
        sample_rate: 8000,
        n_fft: 32,
        hop: 8,
        win: 32,
        n_mels: 6,
        f_min: 0.0,
        f_max: 4000.0,
        floor: 1e-5,
        trainable: true,
    }
}

pub fn randn(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn random_signal(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.9f32..0.9)).collect()
}

/// Largest per-tensor relative error `|g - g_fd| / max(|g|, |g_fd|)` between
/// the analytic gradient and a central difference over every element of the
/// named parameters.
pub fn gradcheck(store: &ParamStore, names: &[String], loss: impl Fn() -> Tensor, h: f64) -> Vec<(String, f64)> {
    assert_eq!(store.dtype(), DType::F64);
    let grads = loss().backward().unwrap();
    let mut out = Vec::new();
    for name in names {
        let var: Var = store.get(name).unwrap();
        let analytic: Vec<f64> = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all().unwrap().to_vec1().unwrap(),
            None => vec![0.0; var.elem_count()],
        };
        let orig = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let shape = var.shape().clone();
        let mut numeric = Vec::with_capacity(orig.len());
        for i in 0..orig.len() {
            let eval = |delta: f64| {
                let mut v = orig.clone();
                v[i] += delta;
                var.set(&Tensor::from_vec(v, shape.clone(), &Device::Cpu).unwrap()).unwrap();
                loss().to_scalar::<f64>().unwrap()
            };
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        var.set(&Tensor::from_vec(orig, shape, &Device::Cpu).unwrap()).unwrap();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = if na.max(nn) == 0.0 { 0.0 } else { diff / na.max(nn) };
        out.push((name.clone(), rel));
    }
    out
}
