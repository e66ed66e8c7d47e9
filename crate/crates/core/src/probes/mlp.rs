use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, scalar, Linear, ParamStore};

use super::ProbeConfig;

/// Single-hidden-layer perceptron trained by minibatch gradient descent with
/// early stopping on validation loss.
#[derive(Debug, Clone)]
pub struct MlpProbe {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl MlpProbe {
    pub fn from_config(cfg: &ProbeConfig) -> Self {
        Self {
            hidden: cfg.hidden,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            max_epochs: cfg.max_epochs,
            patience: cfg.patience,
            seed: cfg.seed,
        }
    }

    /// Trains on `(features, labels)`; the returned probe carries the
    /// parameters of the epoch with the lowest validation loss.
    pub fn train(
        &self,
        train: (&[Vec<f32>], &[usize]),
        val: (&[Vec<f32>], &[usize]),
        n_classes: usize,
    ) -> Result<TrainedProbe> {
        if train.0.is_empty() || val.0.is_empty() {
            return Err(Error::Config("probe train and validation sets must be non-empty".into()));
        }
        let dim = train.0[0].len();
        let x_train = matrix(train.0, dim)?;
        let y_train = labels_u32(train.1, n_classes)?;
        let x_val = matrix(val.0, dim)?;
        let y_val = labels_u32(val.1, n_classes)?;

        let store = ParamStore::new(DType::F32, self.seed);
        let root = store.root();
        let l1 = Linear::new(root.pp("hidden"), dim, self.hidden)?;
        let l2 = Linear::new(root.pp("out"), self.hidden, n_classes)?;
        let vars = store.vars();
        let forward = |x: &Tensor| -> Result<Tensor> { l2.forward(&l1.forward(x)?.relu()?) };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut order: Vec<u32> = (0..train.0.len() as u32).collect();
        let mut best = (f64::INFINITY, 0usize, store.to_blobs()?);
        let mut since_best = 0;
        let mut epochs_run = 0;
        for epoch in 0..self.max_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.batch_size) {
                let idx = Tensor::from_vec(batch.to_vec(), batch.len(), &Device::Cpu)?;
                let xb = x_train.index_select(&idx, 0)?;
                let yb: Vec<u32> = batch.iter().map(|&i| y_train[i as usize]).collect();
                let grads = cross_entropy(&forward(&xb)?, &yb)?.backward()?;
                for (_, v) in &vars {
                    if let Some(g) = grads.get(v.as_tensor()) {
                        v.set(&(v.as_tensor() - (g * self.learning_rate)?)?)?;
                    }
                }
            }
            epochs_run = epoch + 1;
            let val_loss = scalar(&cross_entropy(&forward(&x_val)?, &y_val)?)?;
            if !val_loss.is_finite() {
                return Err(Error::State(format!("probe validation loss diverged at epoch {epoch}")));
            }
            if val_loss < best.0 {
                best = (val_loss, epoch + 1, store.to_blobs()?);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= self.patience {
                    break;
                }
            }
        }
        store.load_blobs(&best.2, "")?;
        Ok(TrainedProbe {
            l1,
            l2,
            dim,
            n_classes,
            epochs_run,
            best_epoch: best.1,
            best_val_loss: best.0,
        })
    }
}

fn matrix(rows: &[Vec<f32>], dim: usize) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(Error::Shape(format!("feature of length {} in a set of dimension {dim}", r.len())));
        }
        flat.extend_from_slice(r);
    }
    Ok(Tensor::from_vec(flat, (rows.len(), dim), &Device::Cpu)?)
}

fn labels_u32(labels: &[usize], n_classes: usize) -> Result<Vec<u32>> {
    labels
        .iter()
        .map(|&l| {
            if l < n_classes {
                Ok(l as u32)
            } else {
                Err(Error::Argument(format!("label {l} outside {n_classes} classes")))
            }
        })
        .collect()
}

pub struct TrainedProbe {
    l1: Linear,
    l2: Linear,
    dim: usize,
    n_classes: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainedProbe {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Arg-max class per feature row.
    pub fn predict(&self, features: &[Vec<f32>]) -> Result<Vec<usize>> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let x = matrix(features, self.dim)?;
        let logits = self.l2.forward(&self.l1.forward(&x)?.relu()?)?;
        Ok(logits.argmax(1)?.to_vec1::<u32>()?.into_iter().map(|v| v as usize).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_linearly_separable_problem() {
        let feats: Vec<Vec<f32>> = (0..200).map(|i| vec![(i % 2) as f32 * 2.0 - 1.0, 0.3]).collect();
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let probe = MlpProbe {
            hidden: 8,
            learning_rate: 0.1,
            batch_size: 16,
            max_epochs: 50,
            patience: 5,
            seed: 1,
        };
        let trained = probe.train((&feats, &labels), (&feats[..20], &labels[..20]), 2).unwrap();
        assert_eq!(trained.predict(&feats).unwrap(), labels);
        assert!(trained.best_epoch <= trained.epochs_run);
    }

    #[test]
    fn empty_sets_are_config_errors() {
        let probe = MlpProbe::from_config(&ProbeConfig::default());
        assert!(matches!(probe.train((&[], &[]), (&[], &[]), 2), Err(Error::Config(_))));
    }
}
