use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{avg_pool1d, leaky_relu, reflect_pad, Builder, Conv1d, ConvSpec, ParamStore};

const SLOPE: f64 = 0.2;
const FIRST_KERNEL: usize = 15;
const DOWN_KERNEL: usize = 41;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub n_scales: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub n_downsample: usize,
    pub downsample_factor: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            n_scales: 3,
            base_channels: 16,
            max_channels: 1024,
            n_downsample: 4,
            downsample_factor: 4,
        }
    }
}

impl DiscriminatorConfig {
    pub fn tiny(base_channels: usize, max_channels: usize) -> Self {
        Self {
            base_channels,
            max_channels,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_scales == 0 || self.base_channels == 0 || self.downsample_factor == 0 {
            return Err(Error::Config("discriminator sizes must be positive".into()));
        }
        if self.max_channels < self.base_channels {
            return Err(Error::Config("discriminator max_channels below base_channels".into()));
        }
        Ok(())
    }

    /// Input channels, output channels and groups of every strided layer.
    pub fn downsample_plan(&self) -> Vec<(usize, usize, usize)> {
        let mut plan = Vec::new();
        let mut c = self.base_channels;
        for _ in 0..self.n_downsample {
            let out = (c * self.downsample_factor).min(self.max_channels);
            let mut groups = (c / 4).max(1);
            while c % groups != 0 || out % groups != 0 {
                groups -= 1;
            }
            plan.push((c, out, groups));
            c = out;
        }
        plan
    }

    /// Length of the score map a single scale emits for an input of `len` samples.
    pub fn score_len(&self, len: usize) -> usize {
        let mut l = len;
        for _ in 0..self.n_downsample {
            l = ConvSpec::new(DOWN_KERNEL)
                .stride(self.downsample_factor)
                .padding(DOWN_KERNEL / 2)
                .out_len(l);
        }
        l
    }

    /// Shortest waveform every scale accepts: the most-pooled scale must still
    /// cover the first layer's kernel.
    pub fn min_input_len(&self) -> usize {
        FIRST_KERNEL << (self.n_scales - 1)
    }
}

/// One scale's outputs: every intermediate activation, then the score map.
#[derive(Debug, Clone)]
pub struct ScaleOutput {
    pub features: Vec<Tensor>,
    pub scores: Tensor,
}

struct ScaleDiscriminator {
    first: Conv1d,
    downs: Vec<Conv1d>,
    penultimate: Conv1d,
    last: Conv1d,
}

impl ScaleDiscriminator {
    fn new(vb: Builder, cfg: &DiscriminatorConfig) -> Result<Self> {
        let first = Conv1d::weight_norm(vb.pp("first"), 1, cfg.base_channels, ConvSpec::new(FIRST_KERNEL))?;
        let mut downs = Vec::new();
        let plan = cfg.downsample_plan();
        for (i, &(c_in, c_out, groups)) in plan.iter().enumerate() {
            let spec = ConvSpec::new(DOWN_KERNEL)
                .stride(cfg.downsample_factor)
                .padding(DOWN_KERNEL / 2)
                .groups(groups);
            downs.push(Conv1d::weight_norm(vb.pp(format!("down{i}")), c_in, c_out, spec)?);
        }
        let c = plan.last().map_or(cfg.base_channels, |p| p.1);
        let c2 = (c * 2).min(cfg.max_channels);
        let penultimate = Conv1d::weight_norm(vb.pp("penultimate"), c, c2, ConvSpec::same(5))?;
        let last = Conv1d::weight_norm(vb.pp("last"), c2, 1, ConvSpec::same(3))?;
        Ok(Self {
            first,
            downs,
            penultimate,
            last,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<ScaleOutput> {
        let mut features = Vec::new();
        let mut h = leaky_relu(&self.first.forward(&reflect_pad(x, FIRST_KERNEL / 2, FIRST_KERNEL / 2)?)?, SLOPE)?;
        features.push(h.clone());
        for d in &self.downs {
            h = leaky_relu(&d.forward(&h)?, SLOPE)?;
            features.push(h.clone());
        }
        h = leaky_relu(&self.penultimate.forward(&h)?, SLOPE)?;
        features.push(h.clone());
        let scores = self.last.forward(&h)?;
        Ok(ScaleOutput { features, scores })
    }
}

/// Bank of discriminators; scale `i` sees the waveform average-pooled `i` times by 2.
pub struct MultiScaleDiscriminator {
    cfg: DiscriminatorConfig,
    store: ParamStore,
    scales: Vec<ScaleDiscriminator>,
}

impl MultiScaleDiscriminator {
    pub fn new(cfg: &DiscriminatorConfig, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(dtype, seed);
        let root = store.root();
        let scales = (0..cfg.n_scales)
            .map(|i| ScaleDiscriminator::new(root.pp(format!("scale{i}")), cfg))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            scales,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `(B, L)` waveforms → one output per scale.
    pub fn forward(&self, wave: &Tensor) -> Result<Vec<ScaleOutput>> {
        let (_, len) = wave.dims2()?;
        if len < self.cfg.min_input_len() {
            return Err(Error::Argument(format!(
                "discriminator needs at least {} samples, got {len}",
                self.cfg.min_input_len()
            )));
        }
        let mut x = wave.unsqueeze(1)?;
        let mut out = Vec::with_capacity(self.scales.len());
        for (i, scale) in self.scales.iter().enumerate() {
            if i > 0 {
                x = avg_pool1d(&x, 4, 2, 1)?;
            }
            out.push(scale.forward(&x)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn default_plan_matches_reference_widths() {
        let plan = DiscriminatorConfig::default().downsample_plan();
        assert_eq!(plan, vec![(16, 64, 4), (64, 256, 16), (256, 1024, 64), (1024, 1024, 256)]);
    }

    #[test]
    fn score_maps_shrink_with_scale() {
        let cfg = DiscriminatorConfig::tiny(2, 8);
        let d = MultiScaleDiscriminator::new(&cfg, DType::F32, 1).unwrap();
        let x = Tensor::zeros((1, 8192), DType::F32, &Device::Cpu).unwrap();
        let out = d.forward(&x).unwrap();
        assert_eq!(out.len(), 3);
        let lens: Vec<usize> = out.iter().map(|o| o.scores.dim(2).unwrap()).collect();
        // Hand-composed strides: ceil(L / 4) four times per scale, L halved per scale.
        assert_eq!(lens, vec![32, 16, 8]);
        assert_eq!(cfg.score_len(8192), 32);
        assert_eq!(out[0].features.len(), 6);
    }

    #[test]
    fn too_short_is_an_argument_error() {
        let cfg = DiscriminatorConfig::tiny(2, 8);
        let d = MultiScaleDiscriminator::new(&cfg, DType::F32, 1).unwrap();
        let x = Tensor::zeros((1, cfg.min_input_len() - 1), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(d.forward(&x), Err(Error::Argument(_))));
    }
}
