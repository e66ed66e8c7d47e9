//! Run configuration: every module's settings plus paths and the seed, read
//! from one TOML document with `section.key=value` overrides layered on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::MODEL_SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::melfront::MelFrontConfig;
use crate::model::{AutoencoderConfig, BottleneckConfig};
use crate::probes::ProbeConfig;
use crate::training::{ConfusionConfig, Stage1Config, Stage2Config, VocoderStageConfig};
use crate::vocoder::{DiscriminatorConfig, GeneratorConfig};

/// Environment variable that replaces `paths.cache_dir`.
pub const CACHE_DIR_ENV: &str = "FASTVC_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub manifest: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            cache_dir: PathBuf::from("cache"),
            out_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Fraction of utterances assigned to the train split when the manifest
    /// does not pin one.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_fraction: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Scorer executable invoked as `scorer ref.wav deg.wav`.
    pub external_scorer: Option<PathBuf>,
    pub external_metric_name: String,
    pub griffin_lim_iters: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            external_scorer: None,
            external_metric_name: "external".into(),
            griffin_lim_iters: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub repeats: usize,
    /// Lets the tensor backend use every core; timings are single-threaded otherwise.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            repeats: 5,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub melfront: MelFrontConfig,
    pub bottleneck: BottleneckConfig,
    pub autoencoder: AutoencoderConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub vocoder_training: VocoderStageConfig,
    pub confusion: ConfusionConfig,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 0,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            melfront: MelFrontConfig::default(),
            bottleneck: BottleneckConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            vocoder_training: VocoderStageConfig::default(),
            confusion: ConfusionConfig::default(),
            probe: ProbeConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML document over the defaults, applies overrides,
    /// validates. Partial tables keep the defaults of their missing keys.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut table =
            toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut table, user);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Cache directory after the environment override.
    pub fn cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.paths.cache_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.melfront.validate()?;
        self.bottleneck.validate()?;
        self.autoencoder.validate()?;
        self.discriminator.validate()?;
        self.generator.validate(self.melfront.hop)?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.vocoder_training.validate()?;
        self.confusion.validate()?;
        self.probe.validate()?;
        if self.melfront.sample_rate != MODEL_SAMPLE_RATE {
            return Err(Error::Config(format!(
                "melfront.sample_rate must be {MODEL_SAMPLE_RATE}, got {}",
                self.melfront.sample_rate
            )));
        }
        if self.autoencoder.n_mels != self.melfront.n_mels || self.generator.n_mels != self.melfront.n_mels {
            return Err(Error::Config(format!(
                "Mel channel counts disagree: melfront {}, autoencoder {}, generator {}",
                self.melfront.n_mels, self.autoencoder.n_mels, self.generator.n_mels
            )));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            return Err(Error::Config("data.train_fraction must lie in (0, 1]".into()));
        }
        if self.bench.repeats < 3 {
            return Err(Error::Config("bench.repeats must be at least 3".into()));
        }
        if self.eval.griffin_lim_iters == 0 {
            return Err(Error::Config("eval.griffin_lim_iters must be at least 1".into()));
        }
        // TOML integers are signed 64-bit.
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!("seed must be at most {}, got {}", i64::MAX, self.seed)));
        }
        Ok(())
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let value = parse_value(raw.trim());
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_must_fit_a_toml_integer() {
        let cfg = RunConfig {
            seed: 1 << 63,
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(RunConfig::from_toml_str("seed = 9223372036854775807", &[]).is_ok());
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::from_toml_str(
            "seed = 3\n[bottleneck]\nk = 16\n",
            &[
                "bottleneck.d=64".into(),
                "stage1.optimizer.lr=0.5".into(),
                "name=smoke run".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.bottleneck, BottleneckConfig { d: 64, k: 16 });
        assert_eq!(cfg.stage1.optimizer.lr, 0.5);
        assert_eq!(cfg.stage1.optimizer.beta2, RunConfig::default().stage1.optimizer.beta2);
        assert_eq!(cfg.name, "smoke run");
    }

    #[test]
    fn unknown_keys_and_inconsistent_sizes_are_rejected() {
        assert!(RunConfig::from_toml_str("sede = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("", &["generator.upsample_factors=[8, 8, 2]".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["autoencoder.n_mels=40".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["nokey".into()]).is_err());
        for key in ["bottleneck.kk", "melfront.hopp", "generator.widht", "discriminator.scales", "autoencoder.dim"] {
            assert!(RunConfig::from_toml_str("", &[format!("{key}=1")]).is_err(), "{key}");
        }
        assert!(RunConfig::from_toml_str("", &["seed.x=1".into()]).is_err());
    }
}
