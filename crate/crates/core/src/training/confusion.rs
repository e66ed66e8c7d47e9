use candle_core::{DType, Tensor};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Linear, ParamStore};

/// Speaker classifier over time-pooled codes: mean over frames, one hidden
/// ReLU layer, registry-sized logits.
pub struct SpeakerClassifier {
    store: ParamStore,
    hidden: Linear,
    out: Linear,
    n_speakers: usize,
}

impl SpeakerClassifier {
    pub fn new(code_dim: usize, hidden: usize, n_speakers: usize, dtype: DType, seed: u64) -> Result<Self> {
        if code_dim == 0 || hidden == 0 || n_speakers == 0 {
            return Err(Error::Config("speaker classifier sizes must be positive".into()));
        }
        let store = ParamStore::new(dtype, seed);
        let root = store.root();
        let out = Linear::new(root.pp("out"), hidden, n_speakers)?;
        let hidden = Linear::new(root.pp("hidden"), code_dim, hidden)?;
        Ok(Self {
            store,
            hidden,
            out,
            n_speakers,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn n_speakers(&self) -> usize {
        self.n_speakers
    }

    /// `(B, d, T')` codes → `(B, n_speakers)` logits.
    pub fn forward(&self, codes: &Tensor) -> Result<Tensor> {
        Self::apply(&self.hidden, &self.out, codes)
    }

    /// Same function with the classifier's parameters cut from the graph.
    pub fn forward_frozen(&self, codes: &Tensor) -> Result<Tensor> {
        Self::apply(&self.hidden.detached(), &self.out.detached(), codes)
    }

    fn apply(hidden: &Linear, out: &Linear, codes: &Tensor) -> Result<Tensor> {
        let pooled = codes.mean(2)?;
        out.forward(&hidden.forward(&pooled)?.relu()?)
    }
}

/// Returns `(classifier_loss, confusion_loss)`.
///
/// `classifier_loss` is the speaker cross-entropy on detached codes, so its
/// gradient reaches only the classifier. `confusion_loss` has the same value
/// negated, computed with the classifier frozen, so its gradient reaches only
/// whatever produced `codes`.
pub fn domain_confusion_regularizer(
    codes: &Tensor,
    speaker_labels: &[usize],
    classifier: &SpeakerClassifier,
) -> Result<(Tensor, Tensor)> {
    let b = codes.dim(0)?;
    if speaker_labels.len() != b {
        return Err(Error::Shape(format!(
            "{} speaker labels for a batch of {b}",
            speaker_labels.len()
        )));
    }
    if let Some(&bad) = speaker_labels.iter().find(|&&l| l >= classifier.n_speakers) {
        return Err(Error::Argument(format!(
            "speaker label {bad} outside registry of {}",
            classifier.n_speakers
        )));
    }
    let labels: Vec<u32> = speaker_labels.iter().map(|&l| l as u32).collect();
    let classifier_loss = cross_entropy(&classifier.forward(&codes.detach())?, &labels)?;
    let confusion_loss = cross_entropy(&classifier.forward_frozen(codes)?, &labels)?.neg()?;
    Ok((classifier_loss, confusion_loss))
}
