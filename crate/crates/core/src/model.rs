//! Speaker-conditioned autoencoder with a dual information bottleneck.
//!
//! The encoder sees the log-Mel input with the source speaker's one-hot vector
//! appended to every frame, reduces it to `d` channels and keeps one frame out
//! of every `k`. The codes are brought back to the frame rate with a zero-order
//! hold and decoded together with the target speaker's one-hot vector. A
//! residual PostNet refines the decoder output.

use candle_core::{DType, Device, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::SpeakerRegistry;
use crate::error::{Error, Result};
use crate::melfront::MelSpectrogram;
use crate::nn::{select_time, BiLstm, Builder, ChannelNorm, Conv1d, ConvSpec, Linear, Lstm, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BottleneckConfig {
    /// Code dimension.
    pub d: usize,
    /// Temporal downsampling factor.
    pub k: usize,
}

impl Default for BottleneckConfig {
    fn default() -> Self {
        Self { d: 32, k: 32 }
    }
}

impl BottleneckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::Config("bottleneck d and k must be at least 1".into()));
        }
        if self.d % 2 != 0 {
            return Err(Error::Config(format!(
                "bottleneck d = {} must be even (split across two recurrent directions)",
                self.d
            )));
        }
        Ok(())
    }

    pub fn code_rate(&self, frame_rate: f64) -> f64 {
        frame_rate / self.k as f64
    }

    pub fn n_codes(&self, n_frames: usize) -> usize {
        n_frames.div_ceil(self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub n_mels: usize,
    /// Fixed standardization `(x - mel_mean) / mel_std` applied to log-Mel
    /// inputs; outputs are mapped back, so losses stay in log-Mel units.
    pub mel_mean: f64,
    pub mel_std: f64,
    pub kernel: usize,
    pub enc_conv_width: usize,
    pub enc_conv_layers: usize,
    pub enc_rnn_layers: usize,
    pub dec_rnn1_width: usize,
    pub dec_conv_width: usize,
    pub dec_conv_layers: usize,
    pub dec_rnn2_width: usize,
    pub dec_rnn2_layers: usize,
    pub postnet_width: usize,
    pub postnet_layers: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            mel_mean: -5.0,
            mel_std: 3.5,
            kernel: 5,
            enc_conv_width: 512,
            enc_conv_layers: 3,
            enc_rnn_layers: 1,
            dec_rnn1_width: 512,
            dec_conv_width: 512,
            dec_conv_layers: 3,
            dec_rnn2_width: 1024,
            dec_rnn2_layers: 2,
            postnet_width: 512,
            postnet_layers: 5,
        }
    }
}

impl AutoencoderConfig {
    /// Uniformly narrow configuration for tests and desk-scale runs.
    pub fn tiny(width: usize) -> Self {
        Self {
            enc_conv_width: width,
            dec_rnn1_width: width,
            dec_conv_width: width,
            dec_rnn2_width: width,
            postnet_width: width,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.n_mels,
            self.kernel,
            self.enc_conv_width,
            self.enc_rnn_layers,
            self.dec_rnn1_width,
            self.dec_conv_width,
            self.dec_rnn2_width,
            self.dec_rnn2_layers,
            self.postnet_width,
        ];
        if fields.contains(&0) {
            return Err(Error::Config("autoencoder widths and layer counts must be positive".into()));
        }
        if !(self.mel_std > 0.0 && self.mel_mean.is_finite()) {
            return Err(Error::Config("autoencoder mel_std must be positive and mel_mean finite".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("autoencoder kernel must be odd".into()));
        }
        if self.postnet_layers < 2 {
            return Err(Error::Config("postnet needs at least 2 layers".into()));
        }
        Ok(())
    }
}

/// One-hot speaker vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    index: usize,
    size: usize,
}

impl SpeakerEmbedding {
    pub fn new(index: usize, size: usize) -> Result<Self> {
        if index >= size {
            return Err(Error::Argument(format!("speaker index {index} outside registry of {size}")));
        }
        Ok(Self { index, size })
    }

    pub fn for_speaker(registry: &SpeakerRegistry, id: &str) -> Result<Self> {
        Self::new(registry.lookup(id)?, registry.len())
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.size];
        v[self.index] = 1.0;
        v
    }
}

/// `(B, n_speakers)` one-hot rows.
pub fn one_hot_batch(indices: &[usize], n_speakers: usize, dtype: DType) -> Result<Tensor> {
    let mut data = vec![0f32; indices.len() * n_speakers];
    for (row, &i) in indices.iter().enumerate() {
        if i >= n_speakers {
            return Err(Error::Argument(format!("speaker index {i} outside registry of {n_speakers}")));
        }
        data[row * n_speakers + i] = 1.0;
    }
    Ok(Tensor::from_vec(data, (indices.len(), n_speakers), &Device::Cpu)?.to_dtype(dtype)?)
}

/// `d x T'` codes at the reduced temporal rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodes {
    pub values: Array2<f32>,
    pub code_rate: f64,
}

impl LatentCodes {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_codes(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let data: Vec<f32> = self.values.iter().copied().collect();
        Ok(Tensor::from_vec(data, (1, self.dim(), self.n_codes()), &Device::Cpu)?.to_dtype(dtype)?)
    }

    pub fn from_tensor(t: &Tensor, item: usize, code_rate: f64) -> Result<Self> {
        let m = t.get(item)?.to_dtype(DType::F32)?;
        let (rows, cols) = m.dims2()?;
        let values = Array2::from_shape_vec((rows, cols), m.flatten_all()?.to_vec1::<f32>()?)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self { values, code_rate })
    }
}

/// Frames kept by [`downsample_time`]: the last frame of every block of `k`,
/// including a trailing partial block.
pub fn downsample_indices(n_frames: usize, k: usize) -> Vec<usize> {
    (0..n_frames.div_ceil(k))
        .map(|j| ((j + 1) * k - 1).min(n_frames - 1))
        .collect()
}

/// Source code index of each output frame of [`causal_upsample`].
pub fn upsample_indices(n_out: usize, k: usize) -> Vec<usize> {
    (0..n_out).map(|t| t / k).collect()
}

/// Keeps frames `k-1, 2k-1, ...` of the last axis (plus the final frame of a
/// partial block).
pub fn downsample_time(h: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::Argument("downsampling factor must be at least 1".into()));
    }
    let t = h.dim(h.rank() - 1)?;
    if k == 1 || t == 0 {
        return Ok(h.clone());
    }
    select_time(h, &downsample_indices(t, k))
}

/// Zero-order hold: output frame `t` copies code `floor(t / k)`.
pub fn causal_upsample(codes: &Tensor, k: usize, n_out: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::Argument("upsampling factor must be at least 1".into()));
    }
    let n_codes = codes.dim(codes.rank() - 1)?;
    if n_out > k * n_codes {
        return Err(Error::Argument(format!(
            "cannot upsample {n_codes} codes by {k} to {n_out} frames"
        )));
    }
    if k == 1 && n_out == n_codes {
        return Ok(codes.clone());
    }
    select_time(codes, &upsample_indices(n_out, k))
}

/// Appends the `(B, S)` speaker rows to every frame of `(B, C, T)`.
fn condition(x: &Tensor, speakers: &Tensor) -> Result<Tensor> {
    let (b, _, t) = x.dims3()?;
    let s = speakers.dim(1)?;
    let spk = speakers.unsqueeze(2)?.broadcast_as((b, s, t))?;
    Ok(Tensor::cat(&[x, &spk.to_dtype(x.dtype())?], 1)?)
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv1d,
    norm: ChannelNorm,
}

impl ConvBlock {
    fn new(vb: Builder, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(vb.pp("conv"), c_in, c_out, ConvSpec::same(kernel))?,
            norm: ChannelNorm::new(vb.pp("norm"), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.norm.forward(&self.conv.forward(x)?)
    }
}

struct Encoder {
    convs: Vec<ConvBlock>,
    rnns: Vec<BiLstm>,
}

impl Encoder {
    fn new(vb: Builder, cfg: &AutoencoderConfig, bn: &BottleneckConfig, n_speakers: usize) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c_in = cfg.n_mels + n_speakers;
        for i in 0..cfg.enc_conv_layers {
            convs.push(ConvBlock::new(vb.pp(format!("conv{i}")), c_in, cfg.enc_conv_width, cfg.kernel)?);
            c_in = cfg.enc_conv_width;
        }
        let mut rnns = Vec::new();
        for i in 0..cfg.enc_rnn_layers {
            rnns.push(BiLstm::new(vb.pp(format!("rnn{i}")), c_in, bn.d / 2)?);
            c_in = bn.d;
        }
        Ok(Self { convs, rnns })
    }

    /// `(B, C, T)` → `(B, d, T)` before temporal selection.
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.convs {
            h = block.forward(&h)?.relu()?;
        }
        let mut h = h.transpose(1, 2)?.contiguous()?;
        for rnn in &self.rnns {
            h = rnn.forward(&h)?;
        }
        Ok(h.transpose(1, 2)?.contiguous()?)
    }
}

struct Decoder {
    rnn1: Lstm,
    convs: Vec<ConvBlock>,
    rnn2: Vec<Lstm>,
    proj: Linear,
}

impl Decoder {
    fn new(vb: Builder, cfg: &AutoencoderConfig, bn: &BottleneckConfig, n_speakers: usize) -> Result<Self> {
        let rnn1 = Lstm::new(vb.pp("rnn1"), bn.d + n_speakers, cfg.dec_rnn1_width)?;
        let mut convs = Vec::new();
        let mut c_in = cfg.dec_rnn1_width;
        for i in 0..cfg.dec_conv_layers {
            convs.push(ConvBlock::new(vb.pp(format!("conv{i}")), c_in, cfg.dec_conv_width, cfg.kernel)?);
            c_in = cfg.dec_conv_width;
        }
        let mut rnn2 = Vec::new();
        for i in 0..cfg.dec_rnn2_layers {
            rnn2.push(Lstm::new(vb.pp(format!("rnn2_{i}")), c_in, cfg.dec_rnn2_width)?);
            c_in = cfg.dec_rnn2_width;
        }
        let proj = Linear::new(vb.pp("proj"), c_in, cfg.n_mels)?;
        Ok(Self { rnn1, convs, rnn2, proj })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.rnn1.forward(&x.transpose(1, 2)?.contiguous()?, false)?;
        let mut h = h.transpose(1, 2)?.contiguous()?;
        for block in &self.convs {
            h = block.forward(&h)?.relu()?;
        }
        let mut h = h.transpose(1, 2)?.contiguous()?;
        for rnn in &self.rnn2 {
            h = rnn.forward(&h, false)?;
        }
        Ok(self.proj.forward(&h)?.transpose(1, 2)?.contiguous()?)
    }
}

struct PostNet {
    blocks: Vec<ConvBlock>,
}

impl PostNet {
    fn new(vb: Builder, cfg: &AutoencoderConfig) -> Result<Self> {
        let mut blocks = Vec::new();
        for i in 0..cfg.postnet_layers {
            let c_in = if i == 0 { cfg.n_mels } else { cfg.postnet_width };
            let c_out = if i + 1 == cfg.postnet_layers { cfg.n_mels } else { cfg.postnet_width };
            blocks.push(ConvBlock::new(vb.pp(format!("conv{i}")), c_in, c_out, cfg.kernel)?);
        }
        Ok(Self { blocks })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.blocks.len() - 1;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(&h)?;
            if i != last {
                h = h.tanh()?;
            }
        }
        Ok(h)
    }
}

/// Autoencoder outputs, all `(B, ·, ·)` tensors.
#[derive(Debug, Clone)]
pub struct AutoencoderOutput {
    pub pre_postnet: Tensor,
    pub post_postnet: Tensor,
    pub codes: Tensor,
}

pub struct Autoencoder {
    cfg: AutoencoderConfig,
    bottleneck: BottleneckConfig,
    n_speakers: usize,
    store: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    postnet: PostNet,
}

impl Autoencoder {
    pub fn new(
        cfg: &AutoencoderConfig,
        bottleneck: &BottleneckConfig,
        n_speakers: usize,
        dtype: DType,
        seed: u64,
    ) -> Result<Self> {
        Self::with_store(cfg, bottleneck, n_speakers, ParamStore::new(dtype, seed))
    }

    fn with_store(
        cfg: &AutoencoderConfig,
        bottleneck: &BottleneckConfig,
        n_speakers: usize,
        store: ParamStore,
    ) -> Result<Self> {
        cfg.validate()?;
        bottleneck.validate()?;
        if n_speakers == 0 {
            return Err(Error::Config("autoencoder needs at least one speaker".into()));
        }
        let root = store.root();
        let encoder = Encoder::new(root.pp("encoder"), cfg, bottleneck, n_speakers)?;
        let decoder = Decoder::new(root.pp("decoder"), cfg, bottleneck, n_speakers)?;
        let postnet = PostNet::new(root.pp("postnet"), cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            bottleneck: *bottleneck,
            n_speakers,
            store,
            encoder,
            decoder,
            postnet,
        })
    }

    /// Independent copy with its own parameter storage.
    pub fn deep_copy(&self) -> Result<Self> {
        Self::with_store(&self.cfg, &self.bottleneck, self.n_speakers, self.store.deep_copy()?)
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.cfg
    }

    pub fn bottleneck(&self) -> &BottleneckConfig {
        &self.bottleneck
    }

    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// Names of the encoder's parameters.
    pub fn encoder_param_names(&self) -> Vec<String> {
        self.store
            .names()
            .into_iter()
            .filter(|n| n.starts_with("encoder."))
            .collect()
    }

    fn check_inputs(&self, x: &Tensor, channels: usize, speakers: &Tensor) -> Result<()> {
        let (b, c, _) = x.dims3()?;
        if c != channels {
            return Err(Error::Shape(format!("expected {channels} input channels, got {c}")));
        }
        let (bs, s) = speakers.dims2()?;
        if s != self.n_speakers {
            return Err(Error::Shape(format!(
                "speaker vector of length {s}, model built for {} speakers",
                self.n_speakers
            )));
        }
        if bs != b {
            return Err(Error::Shape(format!("batch of {b} inputs but {bs} speaker rows")));
        }
        Ok(())
    }

    /// Encoder output at the frame rate, before temporal selection: `(B, d, T)`.
    pub fn encode_dense(&self, mel: &Tensor, speakers: &Tensor) -> Result<Tensor> {
        self.check_inputs(mel, self.cfg.n_mels, speakers)?;
        self.encoder.forward(&condition(&self.standardize(mel)?, speakers)?)
    }

    /// `(B, n_mels, T)` log-Mel + `(B, S)` one-hot → `(B, d, ceil(T / k))` codes.
    pub fn encode(&self, mel: &Tensor, speakers: &Tensor) -> Result<Tensor> {
        downsample_time(&self.encode_dense(mel, speakers)?, self.bottleneck.k)
    }

    /// Frame-rate codes `(B, d, T)` + `(B, S)` one-hot → `(pre, post)` PostNet outputs.
    pub fn decode(&self, codes_up: &Tensor, speakers: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_inputs(codes_up, self.bottleneck.d, speakers)?;
        let pre = self.decoder.forward(&condition(codes_up, speakers)?)?;
        let post = (&pre + self.postnet.forward(&pre)?)?;
        Ok((self.destandardize(&pre)?, self.destandardize(&post)?))
    }

    /// PostNet correction in log-Mel units for a log-Mel `pre`.
    pub fn postnet_residual(&self, pre: &Tensor) -> Result<Tensor> {
        Ok((self.postnet.forward(&self.standardize(pre)?)? * self.cfg.mel_std)?)
    }

    fn standardize(&self, mel: &Tensor) -> Result<Tensor> {
        Ok(mel.affine(1.0 / self.cfg.mel_std, -self.cfg.mel_mean / self.cfg.mel_std)?)
    }

    fn destandardize(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.affine(self.cfg.mel_std, self.cfg.mel_mean)?)
    }

    /// Full pass: encode with `source`, hold codes back to the input frame
    /// count, decode with `target`.
    pub fn forward(&self, mel: &Tensor, source: &Tensor, target: &Tensor) -> Result<AutoencoderOutput> {
        let t = mel.dim(2)?;
        let codes = self.encode(mel, source)?;
        let up = causal_upsample(&codes, self.bottleneck.k, t)?;
        let (pre, post) = self.decode(&up, target)?;
        Ok(AutoencoderOutput {
            pre_postnet: pre,
            post_postnet: post,
            codes,
        })
    }

    pub fn encode_codes(&self, mel: &MelSpectrogram, speaker: &SpeakerEmbedding) -> Result<LatentCodes> {
        let dtype = self.store.dtype();
        let s = one_hot_batch(&[speaker.index()], speaker.len(), dtype)?;
        let codes = self.encode(&mel.to_tensor(dtype)?, &s)?;
        LatentCodes::from_tensor(&codes, 0, self.bottleneck.code_rate(mel.frame_rate))
    }

    /// Mel-to-Mel conversion: encode with `source`, decode with `target`; returns
    /// the PostNet output.
    pub fn convert_mel(
        &self,
        mel: &MelSpectrogram,
        source: &SpeakerEmbedding,
        target: &SpeakerEmbedding,
    ) -> Result<MelSpectrogram> {
        let dtype = self.store.dtype();
        let s = one_hot_batch(&[source.index()], source.len(), dtype)?;
        let t = one_hot_batch(&[target.index()], target.len(), dtype)?;
        let out = self.forward(&mel.to_tensor(dtype)?, &s, &t)?;
        MelSpectrogram::from_tensor(&out.post_postnet, 0, mel.frame_rate, mel.hop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Autoencoder {
        let cfg = AutoencoderConfig {
            n_mels: 6,
            kernel: 3,
            ..AutoencoderConfig::tiny(8)
        };
        Autoencoder::new(&cfg, &BottleneckConfig { d: 4, k: 4 }, 3, DType::F64, 11).unwrap()
    }

    fn ramp(b: usize, c: usize, t: usize) -> Tensor {
        let n = b * c * t;
        let v: Vec<f64> = (0..n).map(|i| ((i * 37 % 17) as f64 / 17.0) - 0.5).collect();
        Tensor::from_vec(v, (b, c, t), &Device::Cpu).unwrap()
    }

    #[test]
    fn downsample_examples() {
        assert_eq!(downsample_indices(8, 4), vec![3, 7]);
        assert_eq!(downsample_indices(10, 4), vec![3, 7, 9]);
        assert_eq!(downsample_indices(5, 1), vec![0, 1, 2, 3, 4]);
        assert_eq!(downsample_indices(3, 32), vec![2]);
    }

    #[test]
    fn upsample_example_and_errors() {
        let c = Tensor::new(&[[[1f64, 2.0]]], &Device::Cpu).unwrap();
        let up = causal_upsample(&c, 2, 4).unwrap();
        assert_eq!(up.to_vec3::<f64>().unwrap()[0][0], vec![1.0, 1.0, 2.0, 2.0]);
        assert!(causal_upsample(&c, 2, 5).is_err());
        assert!(causal_upsample(&c, 0, 1).is_err());
    }

    #[test]
    fn code_shapes() {
        let ae = tiny();
        let s = one_hot_batch(&[0, 2], 3, DType::F64).unwrap();
        assert_eq!(ae.encode(&ramp(2, 6, 16), &s).unwrap().dims(), &[2, 4, 4]);
        assert_eq!(ae.encode(&ramp(2, 6, 17), &s).unwrap().dims(), &[2, 4, 5]);
    }

    #[test]
    fn shape_errors() {
        let ae = tiny();
        let s = one_hot_batch(&[0], 3, DType::F64).unwrap();
        assert!(matches!(ae.encode(&ramp(1, 5, 8), &s), Err(Error::Shape(_))));
        let s4 = one_hot_batch(&[0], 4, DType::F64).unwrap();
        assert!(matches!(ae.encode(&ramp(1, 6, 8), &s4), Err(Error::Shape(_))));
        assert!(matches!(ae.decode(&ramp(1, 3, 8), &s), Err(Error::Shape(_))));
    }

    #[test]
    fn conditioning_changes_codes() {
        let ae = tiny();
        let x = ramp(1, 6, 12);
        let a = ae.encode(&x, &one_hot_batch(&[0], 3, DType::F64).unwrap()).unwrap();
        let b = ae.encode(&x, &one_hot_batch(&[1], 3, DType::F64).unwrap()).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff > 1e-6);
    }

    #[test]
    fn postnet_is_residual() {
        let ae = tiny();
        let s = one_hot_batch(&[1], 3, DType::F64).unwrap();
        let (pre, post) = ae.decode(&Tensor::zeros((1, 4, 9), DType::F64, &Device::Cpu).unwrap(), &s).unwrap();
        let resid = ae.postnet_residual(&pre).unwrap();
        let diff = (post - (pre + resid).unwrap()).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f64>().unwrap() < 1e-12);
    }

    #[test]
    fn odd_code_dimension_is_rejected() {
        assert!(BottleneckConfig { d: 3, k: 2 }.validate().is_err());
        assert!(BottleneckConfig { d: 2, k: 0 }.validate().is_err());
    }

    #[test]
    fn default_code_rate() {
        let bn = BottleneckConfig::default();
        let r = bn.code_rate(22050.0 / 256.0);
        assert!((r - 2.6916).abs() < 1e-3);
    }
}
