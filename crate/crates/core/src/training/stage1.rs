use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{prefixed, Checkpoint, CheckpointHeader, Stage};
use crate::config::RunConfig;
use crate::corpus::{chunk, Dataset, Split, Utterance};
use crate::error::{Error, Result};
use crate::model::one_hot_batch;
use crate::nn::{scalar, Adam};
use crate::pipeline::{sub_seed, FastVc, CLASSIFIER_STREAM};

use super::confusion::{domain_confusion_regularizer, SpeakerClassifier};
use super::losses::{stage1_loss, Stage1Loss};
use super::metrics::MetricsLog;

/// Batch order and chunk offsets of one epoch come from this stream only, so
/// a resumed run sees exactly the batches an uninterrupted one would.
pub(crate) fn epoch_rng(seed: u64, stage_stream: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, stage_stream));
    rng.set_stream(epoch);
    rng
}

pub(crate) const STAGE1_STREAM: u64 = 10;

pub(crate) fn train_utterances<'a>(data: &'a Dataset, model: &FastVc) -> Result<Vec<&'a Utterance>> {
    if data.registry != model.registry {
        return Err(Error::Config(format!(
            "dataset speakers {:?} differ from model speakers {:?}",
            data.registry.names(),
            model.registry.names()
        )));
    }
    let train = data.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    Ok(train)
}

/// Shuffled batches of `(waveform chunks (B, L), speaker indices)`.
pub(crate) fn epoch_batches(
    train: &[&Utterance],
    batch_size: usize,
    chunk_len: usize,
    rng: &mut ChaCha8Rng,
    dtype: DType,
) -> Result<Vec<(Tensor, Vec<usize>)>> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    for idx in order.chunks(batch_size) {
        let mut samples = Vec::with_capacity(idx.len() * chunk_len);
        let mut speakers = Vec::with_capacity(idx.len());
        for &i in idx {
            samples.extend(chunk(&train[i].waveform, chunk_len, rng)?.waveform.samples);
            speakers.push(train[i].speaker);
        }
        let waves = Tensor::from_vec(samples, (idx.len(), chunk_len), &Device::Cpu)?.to_dtype(dtype)?;
        out.push((waves, speakers));
    }
    Ok(out)
}

/// Autoencoder training with the front end and vocoder frozen. Source and
/// target speaker are the same for every sample.
pub struct Stage1Trainer {
    model: FastVc,
    opt: Adam,
    classifier: Option<(SpeakerClassifier, Adam)>,
    epoch: u64,
    step: u64,
    log: MetricsLog,
}

impl Stage1Trainer {
    pub fn new(model: FastVc) -> Result<Self> {
        if !model.melfront.is_initialized() {
            return Err(Error::State("stage-1 training needs an initialized front end".into()));
        }
        let cfg = &model.config;
        let opt = Adam::for_store(model.autoencoder.store(), cfg.stage1.optimizer)?;
        let classifier = if cfg.confusion.enabled {
            let clf = SpeakerClassifier::new(
                cfg.bottleneck.d,
                cfg.confusion.hidden,
                model.registry.len(),
                model.autoencoder.store().dtype(),
                sub_seed(cfg.seed, CLASSIFIER_STREAM),
            )?;
            let clf_opt = Adam::for_store(clf.store(), cfg.confusion.optimizer)?;
            Some((clf, clf_opt))
        } else {
            None
        };
        Ok(Self {
            model,
            opt,
            classifier,
            epoch: 0,
            step: 0,
            log: MetricsLog::new(),
        })
    }

    /// Continues from an autoencoder checkpoint, including optimizer state
    /// and the epoch and step counters.
    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        Self::resume_with(ckpt, &ckpt.header.config)
    }

    /// Like [`Stage1Trainer::resume`] with the loop settings (epochs,
    /// max_steps, checkpoint cadence) taken from `config`.
    pub fn resume_with(ckpt: &Checkpoint, config: &RunConfig) -> Result<Self> {
        if ckpt.header.stage != Stage::Ae {
            return Err(Error::State(format!(
                "stage-1 resume needs an ae checkpoint, got stage {}",
                ckpt.header.stage
            )));
        }
        let mut model = FastVc::from_checkpoint(ckpt)?;
        model.config.stage1.epochs = config.stage1.epochs;
        model.config.stage1.max_steps = config.stage1.max_steps;
        model.config.stage1.checkpoint_every = config.stage1.checkpoint_every;
        let mut t = Self::new(model)?;
        ckpt.restore_optimizer("ae", &mut t.opt)?;
        if let Some((clf, clf_opt)) = &mut t.classifier {
            clf.store().load_blobs(ckpt.section("classifier."), "classifier.")?;
            ckpt.restore_optimizer("classifier", clf_opt)?;
        }
        t.epoch = ckpt.header.epoch;
        t.step = ckpt.header.step;
        Ok(t)
    }

    pub fn model(&self) -> &FastVc {
        &self.model
    }

    pub fn into_model(self) -> FastVc {
        self.model
    }

    pub fn classifier(&self) -> Option<&SpeakerClassifier> {
        self.classifier.as_ref().map(|c| &c.0)
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
        self.model.config.stage1.max_steps.is_some_and(|m| self.step >= m)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.model.config.stage1.epochs || self.step_limit_reached()
    }

    /// Log-Mel of a `(B, L)` batch through the frozen front end.
    pub fn features(&self, waves: &Tensor) -> Result<Tensor> {
        Ok(self.model.melfront.forward(waves)?.detach())
    }

    /// Objective on a batch without updating anything.
    pub fn evaluate(&self, waves: &Tensor, speakers: &[usize]) -> Result<Stage1Loss> {
        let mel = self.features(waves)?;
        let s = one_hot_batch(speakers, self.model.registry.len(), mel.dtype())?;
        stage1_loss(&self.model.autoencoder, &mel, &s)
    }

    /// One optimizer step (plus one classifier step when the regularizer is
    /// on). Returns the logged terms.
    pub fn train_step(&mut self, waves: &Tensor, speakers: &[usize]) -> Result<Vec<(String, f64)>> {
        let loss = self.evaluate(waves, speakers)?;
        let mut terms: Vec<(String, f64)> = loss.terms()?.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut objective = loss.total.clone();
        let mut classifier_loss = None;
        if let Some((clf, _)) = &self.classifier {
            let (cl, conf) = domain_confusion_regularizer(&loss.output.codes, speakers, clf)?;
            objective = (objective + (&conf * self.model.config.confusion.weight)?)?;
            terms.push(("classifier".into(), scalar(&cl)?));
            terms.push(("confusion".into(), scalar(&conf)?));
            terms.push(("objective".into(), scalar(&objective)?));
            classifier_loss = Some(cl);
        }
        self.opt.step(&objective.backward()?)?;
        if let (Some((_, clf_opt)), Some(cl)) = (&mut self.classifier, classifier_loss) {
            clf_opt.step(&cl.backward()?)?;
        }
        self.step += 1;
        for (k, v) in &terms {
            self.log.push(self.step, self.epoch, k, *v);
        }
        Ok(terms)
    }

    /// One pass over the shuffled training split. A `max_steps` limit may
    /// end the pass early; the epoch still counts as done.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<()> {
        let train = train_utterances(data, &self.model)?;
        let cfg = &self.model.config;
        let mut rng = epoch_rng(cfg.seed, STAGE1_STREAM, self.epoch);
        let dtype = self.model.autoencoder.store().dtype();
        let batches = epoch_batches(&train, cfg.stage1.batch_size, cfg.stage1.chunk_len, &mut rng, dtype)?;
        for (waves, speakers) in batches {
            if self.step_limit_reached() {
                break;
            }
            let terms = self.train_step(&waves, &speakers)?;
            if let Some((_, v)) = terms.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::State(format!("non-finite loss {v} at step {}", self.step)));
            }
        }
        self.epoch += 1;
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let header = CheckpointHeader::new(Stage::Ae, self.epoch, self.step, &self.model.registry, &self.model.config);
        let mut blobs = self.model.param_blobs()?;
        if let Some((clf, _)) = &self.classifier {
            blobs.extend(prefixed("classifier.", clf.store().to_blobs()?));
        }
        let mut ck = Checkpoint::new(header, blobs)?;
        ck.push_optimizer("ae", &self.opt)?;
        if let Some((_, clf_opt)) = &self.classifier {
            ck.push_optimizer("classifier", clf_opt)?;
        }
        Ok(ck)
    }

    /// Trains until the epoch or step budget is spent, handing a checkpoint
    /// to `sink` every `checkpoint_every` epochs and after the last one.
    pub fn run(&mut self, data: &Dataset, mut sink: impl FnMut(&Checkpoint) -> Result<()>) -> Result<()> {
        let every = self.model.config.stage1.checkpoint_every;
        while !self.finished() {
            self.train_epoch(data)?;
            if self.epoch % every == 0 || self.finished() {
                sink(&self.checkpoint()?)?;
            }
        }
        Ok(())
    }
}

/// Fresh stage-1 run over `data`.
pub fn train_stage1(
    data: &Dataset,
    config: &RunConfig,
    sink: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Stage1Trainer> {
    let model = FastVc::new(config, data.registry.clone())?;
    let mut trainer = Stage1Trainer::new(model)?;
    trainer.run(data, sink)?;
    Ok(trainer)
}
