use candle_core::Tensor;

use crate::checkpoint::{prefixed, Checkpoint, CheckpointHeader, Stage};
use crate::config::RunConfig;
use crate::corpus::{Dataset, SpeakerRegistry};
use crate::error::{Error, Result};
use crate::melfront::LearnableMelFront;
use crate::model::{one_hot_batch, Autoencoder};
use crate::nn::{mse, scalar, Adam, AdamConfig};
use crate::pipeline::{sub_seed, FastVc, DISC_STREAM};
use crate::vocoder::{MultiScaleDiscriminator, ScaleOutput};

use super::metrics::MetricsLog;
use super::stage1::{epoch_batches, epoch_rng, train_utterances};

const STAGE2_STREAM: u64 = 11;
const VOCODER_STREAM: u64 = 12;

/// What the generator side of the game is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialMode {
    /// Vocoder alone, fed the frozen front end's Mel of real audio.
    Vocoder,
    /// The whole waveform-to-waveform pipeline, with the content term.
    EndToEnd,
}

impl AdversarialMode {
    fn stage(self) -> Stage {
        match self {
            AdversarialMode::Vocoder => Stage::Vocoder,
            AdversarialMode::EndToEnd => Stage::E2e,
        }
    }
}

struct Settings {
    opt: AdamConfig,
    disc_opt: AdamConfig,
    epochs: u64,
    batch_size: usize,
    chunk_len: usize,
    max_steps: Option<u64>,
    checkpoint_every: u64,
    feature_weight: f64,
    content_weight: f64,
    stream: u64,
}

impl Settings {
    fn new(mode: AdversarialMode, cfg: &RunConfig) -> Self {
        match mode {
            AdversarialMode::EndToEnd => {
                let c = &cfg.stage2;
                Self {
                    opt: c.optimizer,
                    disc_opt: c.disc_optimizer,
                    epochs: c.epochs,
                    batch_size: c.batch_size,
                    chunk_len: c.chunk_len,
                    max_steps: c.max_steps,
                    checkpoint_every: c.checkpoint_every,
                    feature_weight: c.feature_weight,
                    content_weight: c.content_weight,
                    stream: STAGE2_STREAM,
                }
            }
            AdversarialMode::Vocoder => {
                let c = &cfg.vocoder_training;
                Self {
                    opt: c.optimizer,
                    disc_opt: c.disc_optimizer,
                    epochs: c.epochs,
                    batch_size: c.batch_size,
                    chunk_len: c.chunk_len,
                    max_steps: c.max_steps,
                    checkpoint_every: c.checkpoint_every,
                    feature_weight: c.feature_weight,
                    content_weight: 0.0,
                    stream: VOCODER_STREAM,
                }
            }
        }
    }
}

/// Frozen copy of the stage-1 front end and encoder that scores content.
struct ContentReference {
    melfront: LearnableMelFront,
    autoencoder: Autoencoder,
}

/// Generator/discriminator training with hinge losses, feature matching and
/// (end to end) the content term. Each step is one discriminator update
/// followed by one generator update.
pub struct AdversarialTrainer {
    mode: AdversarialMode,
    settings: Settings,
    model: FastVc,
    disc: MultiScaleDiscriminator,
    gen_opt: Adam,
    disc_opt: Adam,
    reference: Option<ContentReference>,
    epoch: u64,
    step: u64,
    log: MetricsLog,
}

impl AdversarialTrainer {
    /// Starts a new adversarial stage under `config`.
    ///
    /// End-to-end training requires a stage-1 (`ae`) or vocoder checkpoint as
    /// warm start. Vocoder training may start fresh, in which case `registry`
    /// names the speakers.
    pub fn new(
        mode: AdversarialMode,
        config: &RunConfig,
        warm_start: Option<&Checkpoint>,
        registry: Option<SpeakerRegistry>,
    ) -> Result<Self> {
        config.validate()?;
        let model = match (mode, warm_start) {
            (AdversarialMode::EndToEnd, None) => {
                return Err(Error::State(
                    "end-to-end training needs a warm start: pass a stage-1 (ae) checkpoint".into(),
                ))
            }
            (_, Some(ck)) => {
                let allowed = match mode {
                    AdversarialMode::EndToEnd => matches!(ck.header.stage, Stage::Ae | Stage::Vocoder),
                    AdversarialMode::Vocoder => matches!(ck.header.stage, Stage::Ae | Stage::Init),
                };
                if !allowed {
                    return Err(Error::State(format!(
                        "cannot warm-start {} training from a {} checkpoint",
                        mode.stage(),
                        ck.header.stage
                    )));
                }
                let mut m = FastVc::new(config, ck.header.registry.clone())?;
                m.load_params(ck.blobs())?;
                m
            }
            (AdversarialMode::Vocoder, None) => {
                let registry = registry.ok_or_else(|| {
                    Error::Argument("fresh vocoder training needs a speaker registry".into())
                })?;
                FastVc::new(config, registry)?
            }
        };
        let disc = MultiScaleDiscriminator::new(
            &config.discriminator,
            model.vocoder.store().dtype(),
            sub_seed(config.seed, DISC_STREAM),
        )?;
        if let Some(ck) = warm_start.filter(|ck| ck.has_section("disc.")) {
            disc.store().load_blobs(ck.section("disc."), "disc.")?;
        }
        let reference = match mode {
            AdversarialMode::EndToEnd => Some(ContentReference {
                melfront: model.melfront.deep_copy()?,
                autoencoder: model.autoencoder.deep_copy()?,
            }),
            AdversarialMode::Vocoder => None,
        };
        Self::assemble(mode, model, disc, reference)
    }

    fn assemble(
        mode: AdversarialMode,
        model: FastVc,
        disc: MultiScaleDiscriminator,
        reference: Option<ContentReference>,
    ) -> Result<Self> {
        let settings = Settings::new(mode, &model.config);
        let mut vars = prefixed_vars("vocoder.", model.vocoder.store().vars());
        if mode == AdversarialMode::EndToEnd {
            vars.extend(prefixed_vars("ae.", model.autoencoder.store().vars()));
            if model.config.melfront.trainable {
                vars.extend(prefixed_vars("melfront.", model.melfront.store().vars()));
            }
        }
        let gen_opt = Adam::new(vars, settings.opt)?;
        let disc_opt = Adam::for_store(disc.store(), settings.disc_opt)?;
        Ok(Self {
            mode,
            settings,
            model,
            disc,
            gen_opt,
            disc_opt,
            reference,
            epoch: 0,
            step: 0,
            log: MetricsLog::new(),
        })
    }

    /// Continues a vocoder or end-to-end run from its own checkpoint. Loop
    /// settings (epochs, max_steps, checkpoint cadence) come from `config`.
    pub fn resume(ckpt: &Checkpoint, config: &RunConfig) -> Result<Self> {
        let mode = match ckpt.header.stage {
            Stage::Vocoder => AdversarialMode::Vocoder,
            Stage::E2e => AdversarialMode::EndToEnd,
            other => {
                return Err(Error::State(format!(
                    "adversarial resume needs a vocoder or e2e checkpoint, got stage {other}"
                )))
            }
        };
        let mut model = FastVc::from_checkpoint(ckpt)?;
        copy_loop_settings(&mut model.config, config, mode);
        let disc = MultiScaleDiscriminator::new(&model.config.discriminator, model.vocoder.store().dtype(), 0)?;
        disc.store().load_blobs(ckpt.section("disc."), "disc.")?;
        let reference = match mode {
            AdversarialMode::EndToEnd => {
                let cfg = &model.config;
                let mut melfront = LearnableMelFront::uninitialized(&cfg.melfront, model.melfront.store().dtype())?;
                melfront.load_blobs(ckpt.section("ref.melfront."), "ref.melfront.")?;
                let autoencoder = Autoencoder::new(
                    &cfg.autoencoder,
                    &cfg.bottleneck,
                    model.registry.len(),
                    model.autoencoder.store().dtype(),
                    0,
                )?;
                autoencoder.store().load_blobs(ckpt.section("ref.ae."), "ref.ae.")?;
                Some(ContentReference { melfront, autoencoder })
            }
            AdversarialMode::Vocoder => None,
        };
        let mut t = Self::assemble(mode, model, disc, reference)?;
        ckpt.restore_optimizer("gen", &mut t.gen_opt)?;
        ckpt.restore_optimizer("disc", &mut t.disc_opt)?;
        t.epoch = ckpt.header.epoch;
        t.step = ckpt.header.step;
        Ok(t)
    }

    pub fn mode(&self) -> AdversarialMode {
        self.mode
    }

    pub fn model(&self) -> &FastVc {
        &self.model
    }

    pub fn into_model(self) -> FastVc {
        self.model
    }

    pub fn discriminator(&self) -> &MultiScaleDiscriminator {
        &self.disc
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    pub fn take_log(&mut self) -> MetricsLog {
        std::mem::take(&mut self.log)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    fn step_limit_reached(&self) -> bool {
        self.settings.max_steps.is_some_and(|m| self.step >= m)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.settings.epochs || self.step_limit_reached()
    }

    /// Generator output for `(B, L)` real audio, cropped to `L` samples.
    pub fn generate(&self, real: &Tensor, speakers: &[usize]) -> Result<Tensor> {
        let len = real.dim(1)?;
        let mel = self.model.melfront.forward(real)?;
        let learn_mel = self.mode == AdversarialMode::EndToEnd && self.model.config.melfront.trainable;
        let mel = if learn_mel { mel } else { mel.detach() };
        let gen_in = match self.mode {
            AdversarialMode::Vocoder => mel,
            AdversarialMode::EndToEnd => {
                let s = one_hot_batch(speakers, self.model.registry.len(), mel.dtype())?;
                self.model.autoencoder.forward(&mel, &s, &s)?.post_postnet
            }
        };
        Ok(self.model.vocoder.forward(&gen_in)?.narrow(1, 0, len)?)
    }

    /// One discriminator update, then one generator update.
    pub fn train_step(&mut self, real: &Tensor, speakers: &[usize]) -> Result<Vec<(String, f64)>> {
        let fake = self.generate(real, speakers)?;

        let real_out = self.disc.forward(real)?;
        let fake_det = self.disc.forward(&fake.detach())?;
        let d_loss = hinge_discriminator_loss(&real_out, &fake_det)?;
        self.disc_opt.step(&d_loss.backward()?)?;

        let fake_out = self.disc.forward(&fake)?;
        let adv = hinge_generator_loss(&fake_out)?;
        let feat = feature_matching_loss(&real_out, &fake_out, self.disc.config().n_downsample)?;
        let adversarial = (&adv + (&feat * self.settings.feature_weight)?)?;
        let mut terms = vec![
            ("d_loss".to_string(), scalar(&d_loss)?),
            ("g_adv".to_string(), scalar(&adv)?),
            ("g_feature".to_string(), scalar(&feat)?),
            ("g_adversarial".to_string(), scalar(&adversarial)?),
        ];
        let total = match &self.reference {
            Some(r) => {
                let s = one_hot_batch(speakers, self.model.registry.len(), real.dtype())?;
                let codes = r.autoencoder.encode(&r.melfront.forward(real)?, &s)?.detach();
                let codes_hat = r.autoencoder.encode(&r.melfront.forward(&fake)?, &s)?;
                let content = mse(&codes, &codes_hat)?;
                let weighted = (&content * self.settings.content_weight)?;
                terms.push(("g_content".into(), scalar(&content)?));
                terms.push(("g_content_weighted".into(), scalar(&weighted)?));
                (adversarial + weighted)?
            }
            None => adversarial,
        };
        terms.push(("g_total".into(), scalar(&total)?));
        self.gen_opt.step(&total.backward()?)?;

        self.step += 1;
        for (k, v) in &terms {
            self.log.push(self.step, self.epoch, k, *v);
        }
        Ok(terms)
    }

    pub fn train_epoch(&mut self, data: &Dataset) -> Result<()> {
        let train = train_utterances(data, &self.model)?;
        let mut rng = epoch_rng(self.model.config.seed, self.settings.stream, self.epoch);
        let dtype = self.model.vocoder.store().dtype();
        let min_len = self.disc.config().min_input_len();
        if self.settings.chunk_len < min_len {
            return Err(Error::Config(format!(
                "chunk_len {} is shorter than the discriminator minimum {min_len}",
                self.settings.chunk_len
            )));
        }
        let batches = epoch_batches(&train, self.settings.batch_size, self.settings.chunk_len, &mut rng, dtype)?;
        for (waves, speakers) in batches {
            if self.step_limit_reached() {
                break;
            }
            let terms = self.train_step(&waves, &speakers)?;
            if let Some((k, v)) = terms.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::State(format!("non-finite {k} = {v} at step {}", self.step)));
            }
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let header = CheckpointHeader::new(
            self.mode.stage(),
            self.epoch,
            self.step,
            &self.model.registry,
            &self.model.config,
        );
        let mut blobs = self.model.param_blobs()?;
        blobs.extend(prefixed("disc.", self.disc.store().to_blobs()?));
        if let Some(r) = &self.reference {
            blobs.extend(prefixed("ref.melfront.", r.melfront.store().to_blobs()?));
            blobs.extend(prefixed("ref.ae.", r.autoencoder.store().to_blobs()?));
        }
        let mut ck = Checkpoint::new(header, blobs)?;
        ck.push_optimizer("gen", &self.gen_opt)?;
        ck.push_optimizer("disc", &self.disc_opt)?;
        Ok(ck)
    }

    pub fn run(&mut self, data: &Dataset, mut sink: impl FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        let every = self.settings.checkpoint_every;
        while !self.finished() {
            self.train_epoch(data)?;
            if self.epoch % every == 0 || self.finished() {
                sink(&self.checkpoint()?)?;
            }
        }
        Ok(())
    }
}

fn prefixed_vars(prefix: &str, vars: Vec<(String, candle_core::Var)>) -> Vec<(String, candle_core::Var)> {
    vars.into_iter().map(|(k, v)| (format!("{prefix}{k}"), v)).collect()
}

fn copy_loop_settings(dst: &mut RunConfig, src: &RunConfig, mode: AdversarialMode) {
    match mode {
        AdversarialMode::EndToEnd => {
            dst.stage2.epochs = src.stage2.epochs;
            dst.stage2.max_steps = src.stage2.max_steps;
            dst.stage2.checkpoint_every = src.stage2.checkpoint_every;
        }
        AdversarialMode::Vocoder => {
            dst.vocoder_training.epochs = src.vocoder_training.epochs;
            dst.vocoder_training.max_steps = src.vocoder_training.max_steps;
            dst.vocoder_training.checkpoint_every = src.vocoder_training.checkpoint_every;
        }
    }
}

/// `sum_scales mean(relu(1 - D(x))) + mean(relu(1 + D(G(z))))`.
pub(crate) fn hinge_discriminator_loss(real: &[ScaleOutput], fake: &[ScaleOutput]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        let lr = (1.0 - &r.scores)?.relu()?.mean_all()?;
        let lf = (&f.scores + 1.0)?.relu()?.mean_all()?;
        let term = (lr + lf)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::State("discriminator produced no scales".into()))
}

/// `-sum_scales mean(D(G(z)))`.
pub(crate) fn hinge_generator_loss(fake: &[ScaleOutput]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for f in fake {
        let term = f.scores.mean_all()?.neg()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::State("discriminator produced no scales".into()))
}

/// Mean absolute feature difference, each layer weighted by
/// `4 / (n_downsample + 1)` and each scale by `1 / n_scales`. Real features
/// are treated as constants.
pub(crate) fn feature_matching_loss(real: &[ScaleOutput], fake: &[ScaleOutput], n_downsample: usize) -> Result<Tensor> {
    let w = 4.0 / (n_downsample as f64 + 1.0) / real.len().max(1) as f64;
    let mut total: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        for (fr, ff) in r.features.iter().zip(&f.features) {
            let term = ((ff - fr.detach())?.abs()?.mean_all()? * w)?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::State("discriminator produced no features".into()))
}

/// End-to-end adversarial training warm-started from a stage-1 checkpoint.
/// A missing warm start is a state error.
pub fn train_stage2(
    data: &Dataset,
    config: &RunConfig,
    warm_start: Option<&Checkpoint>,
    sink: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<AdversarialTrainer> {
    let mut t = AdversarialTrainer::new(AdversarialMode::EndToEnd, config, warm_start, None)?;
    t.run(data, sink)?;
    Ok(t)
}

/// Vocoder-only adversarial training; other modules are carried along from
/// the warm start unchanged.
pub fn train_vocoder(
    data: &Dataset,
    config: &RunConfig,
    warm_start: Option<&Checkpoint>,
    sink: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<AdversarialTrainer> {
    let mut t = AdversarialTrainer::new(AdversarialMode::Vocoder, config, warm_start, Some(data.registry.clone()))?;
    t.run(data, sink)?;
    Ok(t)
}
