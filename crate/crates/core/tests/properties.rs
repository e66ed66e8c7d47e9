use candle_core::{Device, Tensor};
use fastvc::archive::Archive;
use fastvc::audio::{decode_wav, encode_wav, resample, WavEncoding, Waveform};
use fastvc::config::RunConfig;
use fastvc::corpus::{chunk, seeded_permutation, PhonemeAlignment, PhonemeInterval};
use fastvc::melfront::MelSpectrogram;
use fastvc::model::{causal_upsample, downsample_indices, downsample_time, LatentCodes};
use fastvc::nn::Blob;
use fastvc::probes::{code_span, label_codes, mel_frame_l2, mel_l2};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn alignment_strategy() -> impl Strategy<Value = PhonemeAlignment> {
    (0u64..50, prop::collection::vec((1u64..3000, 0u64..200, 0usize..5), 1..12)).prop_map(|(lead, segs)| {
        let labels = ["aa", "iy", "sh", "h#", "er"];
        let mut t = lead;
        let mut ivs = Vec::new();
        for (len, gap, l) in segs {
            t += gap;
            ivs.push(PhonemeInterval {
                start: t,
                end: t + len,
                label: labels[l].into(),
            });
            t += len;
        }
        PhonemeAlignment::new(ivs, 16000).unwrap()
    })
}

proptest! {
    #[test]
    fn downsample_then_upsample_holds_each_code(t in 1usize..300, k in 1usize..40) {
        let h = Tensor::arange(0f32, t as f32, &Device::Cpu).unwrap().reshape((1, 1, t)).unwrap();
        let down = downsample_time(&h, k).unwrap();
        let n = down.dim(2).unwrap();
        prop_assert_eq!(n, t.div_ceil(k));
        let kept: Vec<f32> = down.flatten_all().unwrap().to_vec1().unwrap();
        let idx = downsample_indices(t, k);
        prop_assert_eq!(kept, idx.iter().map(|&i| i as f32).collect::<Vec<_>>());
        let up: Vec<f32> = causal_upsample(&down, k, t).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (i, v) in up.iter().enumerate() {
            prop_assert_eq!(*v, idx[i / k] as f32);
        }
    }

    #[test]
    fn every_code_gets_one_label_from_the_alignment(align in alignment_strategy(), n in 1usize..40, k in 1usize..9) {
        let hop = 64;
        let codes = LatentCodes { values: Array2::zeros((2, n)), code_rate: 1.0 };
        let labeled = label_codes(&codes, &align, hop, k, "u").unwrap();
        prop_assert_eq!(labeled.len(), n);
        let inventory = align.labels();
        for (i, c) in labeled.iter().enumerate() {
            prop_assert_eq!(c.index, i);
            prop_assert!(inventory.contains(c.label.as_str()));
            let (s, e) = code_span(i, hop, k);
            prop_assert_eq!(e - s, (hop * k) as u64);
            if i > 0 {
                prop_assert_eq!(code_span(i - 1, hop, k).1, s);
            }
        }
    }

    #[test]
    fn alignment_text_round_trips(align in alignment_strategy()) {
        prop_assert_eq!(PhonemeAlignment::parse(&align.to_text(), 16000).unwrap(), align);
    }

    #[test]
    fn seeded_permutation_is_a_permutation(n in 0usize..500, seed in any::<u64>()) {
        let mut p = seeded_permutation(n, seed);
        prop_assert_eq!(p.clone(), seeded_permutation(n, seed));
        p.sort_unstable();
        prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn archive_round_trips(
        blobs in prop::collection::vec(
            (prop::collection::vec(1usize..5, 0..3), any::<u32>()),
            0..5,
        ),
        header in "[a-z]{0,20}",
    ) {
        let blobs: Vec<Blob> = blobs
            .into_iter()
            .enumerate()
            .map(|(i, (shape, seed))| {
                let n: usize = shape.iter().product();
                Blob {
                    name: format!("b{i}"),
                    data: (0..n).map(|j| (seed as f32 + j as f32).sin()).collect(),
                    shape,
                }
            })
            .collect();
        let bytes = Archive::encode(header.as_bytes(), &blobs).unwrap();
        let a = Archive::decode(&bytes).unwrap();
        prop_assert_eq!(a.header, header.into_bytes());
        prop_assert_eq!(a.blobs, blobs);
    }

    #[test]
    fn float_wav_round_trip_is_exact(samples in prop::collection::vec(-1.0f32..1.0, 1..400), rate in 8000u32..48000) {
        let w = Waveform::new(samples, rate).unwrap();
        let back = decode_wav(&encode_wav(&w, WavEncoding::Float32).unwrap()).unwrap();
        prop_assert_eq!(back, w);
    }

    #[test]
    fn resampled_length_follows_the_rate_ratio(n in 1usize..4000, from in 8000u32..48000, to in 8000u32..48000) {
        let w = Waveform::new(vec![0.1; n], from).unwrap();
        let r = resample(&w, to).unwrap();
        let expected = (n as f64 * to as f64 / from as f64).round() as i64;
        prop_assert!((r.len() as i64 - expected).abs() <= 1, "{} vs {}", r.len(), expected);
        prop_assert_eq!(r.sample_rate, to);
    }

    #[test]
    fn chunks_have_the_requested_length(n in 1usize..5000, len in 1usize..3000, seed in any::<u64>()) {
        let w = Waveform::new((0..n).map(|i| i as f32 / n as f32).collect(), 22050).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = chunk(&w, len, &mut rng).unwrap();
        prop_assert_eq!(c.waveform.len(), len);
        prop_assert_eq!(c.padded, n < len);
        let copied = len.min(n);
        prop_assert_eq!(&c.waveform.samples[..copied], &w.samples[c.start..c.start + copied]);
    }

    #[test]
    fn mel_distances_are_symmetric_and_zero_on_identity(
        a in prop::collection::vec(-10.0f32..2.0, 24),
        b in prop::collection::vec(-10.0f32..2.0, 24),
    ) {
        let mel = |v: Vec<f32>| MelSpectrogram { values: Array2::from_shape_vec((4, 6), v).unwrap(), frame_rate: 86.0, hop: 256 };
        let (ma, mb) = (mel(a), mel(b));
        prop_assert_eq!(mel_l2(&ma, &ma).unwrap(), 0.0);
        prop_assert_eq!(mel_frame_l2(&ma, &ma).unwrap(), 0.0);
        prop_assert_eq!(mel_l2(&ma, &mb).unwrap(), mel_l2(&mb, &ma).unwrap());
        prop_assert_eq!(mel_frame_l2(&ma, &mb).unwrap(), mel_frame_l2(&mb, &ma).unwrap());
    }

    #[test]
    fn config_overrides_survive_serialization(seed in 0..=i64::MAX as u64, k in 1usize..64, lr in 1e-6f64..1.0) {
        let cfg = RunConfig::from_toml_str(
            "",
            &[format!("seed={seed}"), format!("bottleneck.k={k}"), format!("stage1.optimizer.lr={lr:?}")],
        )
        .unwrap();
        prop_assert_eq!(cfg.seed, seed);
        prop_assert_eq!(cfg.bottleneck.k, k);
        prop_assert_eq!(cfg.stage1.optimizer.lr, lr);
        prop_assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string().unwrap(), &[]).unwrap(), cfg);
    }
}
