use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::melfront::MelSpectrogram;
use crate::nn::{leaky_relu, reflect_pad, Builder, Conv1d, ConvSpec, ConvTranspose1d, ParamStore};

const SLOPE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_mels: usize,
    pub base_width: usize,
    pub upsample_factors: Vec<usize>,
    pub dilations: Vec<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            base_width: 512,
            upsample_factors: vec![8, 8, 2, 2],
            dilations: vec![1, 3, 9],
        }
    }
}

impl GeneratorConfig {
    pub fn tiny(base_width: usize) -> Self {
        Self {
            base_width,
            ..Self::default()
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample_factors.iter().product()
    }

    pub fn validate(&self, hop: usize) -> Result<()> {
        if self.upsample_factors.is_empty() || self.upsample_factors.contains(&0) {
            return Err(Error::Config("generator upsample factors must be positive".into()));
        }
        if self.hop() != hop {
            return Err(Error::Config(format!(
                "generator upsample factors multiply to {}, front-end hop is {hop}",
                self.hop()
            )));
        }
        if self.base_width >> self.upsample_factors.len() == 0 {
            return Err(Error::Config(format!(
                "base width {} too narrow for {} halving stages",
                self.base_width,
                self.upsample_factors.len()
            )));
        }
        Ok(())
    }
}

struct ResBlock {
    dilated: Conv1d,
    pointwise: Conv1d,
    shortcut: Conv1d,
    dilation: usize,
}

impl ResBlock {
    fn new(vb: Builder, c: usize, dilation: usize) -> Result<Self> {
        Ok(Self {
            dilated: Conv1d::weight_norm(vb.pp("dilated"), c, c, ConvSpec::new(3).dilation(dilation))?,
            pointwise: Conv1d::weight_norm(vb.pp("pointwise"), c, c, ConvSpec::new(1))?,
            shortcut: Conv1d::weight_norm(vb.pp("shortcut"), c, c, ConvSpec::new(1))?,
            dilation,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = reflect_pad(&leaky_relu(x, SLOPE)?, self.dilation, self.dilation)?;
        let h = self.pointwise.forward(&leaky_relu(&self.dilated.forward(&h)?, SLOPE)?)?;
        Ok((self.shortcut.forward(x)? + h)?)
    }
}

struct UpStage {
    up: ConvTranspose1d,
    blocks: Vec<ResBlock>,
}

/// Non-autoregressive Mel inverter: transposed-convolution upsampling stages
/// interleaved with dilated residual stacks, weight-normalized, tanh output.
pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    pre: Conv1d,
    stages: Vec<UpStage>,
    post: Conv1d,
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig, hop: usize, dtype: DType, seed: u64) -> Result<Self> {
        Self::with_store(cfg, hop, ParamStore::new(dtype, seed))
    }

    fn with_store(cfg: &GeneratorConfig, hop: usize, store: ParamStore) -> Result<Self> {
        cfg.validate(hop)?;
        let root = store.root();
        let pre = Conv1d::weight_norm(root.pp("pre"), cfg.n_mels, cfg.base_width, ConvSpec::new(7))?;
        let mut c = cfg.base_width;
        let mut stages = Vec::new();
        for (i, &r) in cfg.upsample_factors.iter().enumerate() {
            let vb = root.pp(format!("up{i}"));
            let up = ConvTranspose1d::weight_norm(vb.pp("conv"), c, c / 2, 2 * r, r, r / 2 + r % 2, r % 2)?;
            c /= 2;
            let blocks = cfg
                .dilations
                .iter()
                .enumerate()
                .map(|(j, &d)| ResBlock::new(vb.pp(format!("res{j}")), c, d))
                .collect::<Result<_>>()?;
            stages.push(UpStage { up, blocks });
        }
        let post = Conv1d::weight_norm(root.pp("post"), c, 1, ConvSpec::new(7))?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            pre,
            stages,
            post,
        })
    }

    pub fn deep_copy(&self) -> Result<Self> {
        Self::with_store(&self.cfg, self.cfg.hop(), self.store.deep_copy()?)
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn hop(&self) -> usize {
        self.cfg.hop()
    }

    /// `(B, n_mels, T)` → `(B, hop * T)` in one pass.
    pub fn forward(&self, mel: &Tensor) -> Result<Tensor> {
        let (_, c, _) = mel.dims3()?;
        if c != self.cfg.n_mels {
            return Err(Error::Shape(format!(
                "generator expects {} Mel channels, got {c}",
                self.cfg.n_mels
            )));
        }
        let mut h = self.pre.forward(&reflect_pad(mel, 3, 3)?)?;
        for stage in &self.stages {
            h = stage.up.forward(&leaky_relu(&h, SLOPE)?)?;
            for block in &stage.blocks {
                h = block.forward(&h)?;
            }
        }
        let h = reflect_pad(&leaky_relu(&h, SLOPE)?, 3, 3)?;
        Ok(self.post.forward(&h)?.tanh()?.squeeze(1)?)
    }

    pub fn generate(&self, mel: &MelSpectrogram, sample_rate: u32) -> Result<Waveform> {
        let out = self.forward(&mel.to_tensor(self.store.dtype())?)?;
        let samples = out.get(0)?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
        Waveform::new(samples, sample_rate)
    }
}

#[cfg(test)]
pub(crate) fn zeros_mel(n_mels: usize, t: usize, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::zeros((1, n_mels, t), dtype, &candle_core::Device::Cpu)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dtype: DType) -> Generator {
        Generator::new(&GeneratorConfig::tiny(16), 256, dtype, 3).unwrap()
    }

    #[test]
    fn output_length_is_hop_times_frames() {
        let g = tiny(DType::F32);
        for t in [1, 2, 7, 87] {
            let out = g.forward(&zeros_mel(80, t, DType::F32).unwrap()).unwrap();
            assert_eq!(out.dims(), &[1, 256 * t]);
        }
    }

    #[test]
    fn hop_mismatch_is_a_config_error() {
        assert!(Generator::new(&GeneratorConfig::tiny(16), 200, DType::F32, 0).is_err());
        let narrow = GeneratorConfig::tiny(8);
        assert!(Generator::new(&narrow, 256, DType::F32, 0).is_err());
    }

    #[test]
    fn odd_factors_keep_exact_length() {
        let cfg = GeneratorConfig {
            n_mels: 4,
            base_width: 8,
            upsample_factors: vec![3, 5],
            dilations: vec![1],
        };
        let g = Generator::new(&cfg, 15, DType::F32, 0).unwrap();
        let out = g.forward(&zeros_mel(4, 6, DType::F32).unwrap()).unwrap();
        assert_eq!(out.dims(), &[1, 90]);
    }

    #[test]
    fn channel_mismatch() {
        let g = tiny(DType::F32);
        assert!(matches!(g.forward(&zeros_mel(79, 3, DType::F32).unwrap()), Err(Error::Shape(_))));
    }
}
