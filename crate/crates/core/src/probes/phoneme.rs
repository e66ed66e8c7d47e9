use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::seeded_permutation;
use crate::error::{Error, Result};

use super::labeling::LabeledCode;
use super::mlp::MlpProbe;
use super::report::{Report, TextTable};
use super::ProbeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub accuracy: f64,
    /// Expected accuracy of a uniform random guess, `1 / n_classes`.
    pub baseline_random: f64,
    /// Test accuracy of always answering the train partition's most frequent class.
    pub baseline_prior: f64,
    pub prior_class: String,
    pub n_classes: usize,
    pub classes: Vec<String>,
    /// `confusion[true][predicted]` counts on the test split.
    pub confusion: Vec<Vec<u64>>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

impl ProbeReport {
    /// Accuracy, baselines and confusion counts from class indices.
    pub(crate) fn from_predictions(
        classes: Vec<String>,
        train_labels: &[usize],
        test_labels: &[usize],
        predictions: &[usize],
    ) -> Self {
        let n = classes.len();
        let mut train_counts = vec![0u64; n];
        for &l in train_labels {
            train_counts[l] += 1;
        }
        // First maximum: ties go to the lowest class index.
        let prior = (0..n).fold(0, |best, c| if train_counts[c] > train_counts[best] { c } else { best });
        let mut confusion = vec![vec![0u64; n]; n];
        let mut correct = 0usize;
        let mut prior_hits = 0usize;
        for (&t, &p) in test_labels.iter().zip(predictions) {
            confusion[t][p] += 1;
            correct += usize::from(t == p);
            prior_hits += usize::from(t == prior);
        }
        let n_test = test_labels.len();
        let frac = |k: usize| if n_test == 0 { 0.0 } else { k as f64 / n_test as f64 };
        Self {
            accuracy: frac(correct),
            baseline_random: 1.0 / n as f64,
            baseline_prior: frac(prior_hits),
            prior_class: classes.get(prior).cloned().unwrap_or_default(),
            n_classes: n,
            classes,
            confusion,
            n_train: train_labels.len(),
            n_val: 0,
            n_test,
            epochs_run: 0,
            best_epoch: 0,
        }
    }
}

impl Report for ProbeReport {
    fn to_text(&self) -> String {
        let mut t = TextTable::new(&["quantity", "value"]);
        t.row(&["probe accuracy".into(), format!("{:.4}", self.accuracy)]);
        t.row(&["random baseline".into(), format!("{:.4}", self.baseline_random)]);
        t.row(&[format!("prior baseline ({})", self.prior_class), format!("{:.4}", self.baseline_prior)]);
        t.row(&["classes".into(), self.n_classes.to_string()]);
        t.row(&["train / val / test".into(), format!("{} / {} / {}", self.n_train, self.n_val, self.n_test)]);
        t.row(&["epochs (best)".into(), format!("{} ({})", self.epochs_run, self.best_epoch)]);
        t.render()
    }
}

/// Seeded shuffle, then the first `train_fraction` of items train, the next
/// `val_fraction` validate and the rest test.
pub fn split_labeled<T>(items: Vec<T>, cfg: &ProbeConfig) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let n_train = (n as f64 * cfg.train_fraction).round() as usize;
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).min(n - n_train.min(n));
    let perm = seeded_permutation(n, cfg.seed);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<T> {
        perm[range].iter().map(|&i| slots[i].take().expect("permutation visits each index once")).collect()
    };
    let train = take(0..n_train.min(n));
    let val = take(n_train.min(n)..n_train.min(n) + n_val);
    let test = take(n_train.min(n) + n_val..n);
    (train, val, test)
}

/// Trains the perceptron probe on labeled codes and scores it on `test`.
/// Classes are the sorted union of labels across the three sets.
pub fn train_phoneme_probe(
    train: &[LabeledCode],
    val: &[LabeledCode],
    test: &[LabeledCode],
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "probe splits must be non-empty (train {}, val {}, test {})",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    let classes: Vec<String> = train
        .iter()
        .chain(val)
        .chain(test)
        .map(|c| c.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |c: &LabeledCode| classes.binary_search(&c.label).expect("label collected above");
    let feats = |s: &[LabeledCode]| s.iter().map(|c| c.code.clone()).collect::<Vec<_>>();
    let labels = |s: &[LabeledCode]| s.iter().map(index).collect::<Vec<_>>();
    let (train_x, train_y) = (feats(train), labels(train));
    let (val_x, val_y) = (feats(val), labels(val));
    let (test_x, test_y) = (feats(test), labels(test));

    let probe = MlpProbe::from_config(cfg).train((&train_x, &train_y), (&val_x, &val_y), classes.len())?;
    let predictions = probe.predict(&test_x)?;
    let mut report = ProbeReport::from_predictions(classes, &train_y, &test_y, &predictions);
    report.n_val = val.len();
    report.epochs_run = probe.epochs_run;
    report.best_epoch = probe.best_epoch;
    Ok(report)
}
