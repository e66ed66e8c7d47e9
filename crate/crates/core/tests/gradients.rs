mod common;

use candle_core::DType;
use common::{gradcheck, randn, tiny_melfront};
use fastvc::melfront::LearnableMelFront;
use fastvc::model::{one_hot_batch, Autoencoder, AutoencoderConfig, BottleneckConfig};
use fastvc::training::stage1_loss;

#[test]
fn melfront_gradients_match_finite_differences() {
    let cfg = tiny_melfront();
    let mf = LearnableMelFront::init_from_reference(&cfg, DType::F64).unwrap();
    let wave = randn(&[2, 96], 3, 0.8);
    let target = randn(&[2, 6, 12], 4, 1.0);
    let loss = || (mf.forward(&wave).unwrap() - &target).unwrap().sqr().unwrap().mean_all().unwrap();
    for (name, rel) in gradcheck(mf.store(), &mf.store().names(), loss, 1e-6) {
        assert!(rel < 1e-3, "{name}: relative error {rel}");
    }
}

#[test]
fn stage1_loss_gradients_match_finite_differences() {
    let cfg = AutoencoderConfig {
        n_mels: 6,
        kernel: 3,
        enc_conv_layers: 2,
        dec_conv_layers: 1,
        dec_rnn2_layers: 1,
        postnet_layers: 2,
        ..AutoencoderConfig::tiny(8)
    };
    let ae = Autoencoder::new(&cfg, &BottleneckConfig { d: 4, k: 4 }, 2, DType::F64, 9).unwrap();
    let mel = randn(&[2, 6, 14], 5, 2.0);
    let s = one_hot_batch(&[0, 1], 2, DType::F64).unwrap();
    let loss = || stage1_loss(&ae, &mel, &s).unwrap().total;
    for (name, rel) in gradcheck(ae.store(), &ae.store().names(), loss, 1e-6) {
        assert!(rel < 1e-3, "{name}: relative error {rel}");
    }
}
