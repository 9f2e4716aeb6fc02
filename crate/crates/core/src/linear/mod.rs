//! Linear classifiers over sparse features: multinomial logistic regression
//! and a fastText-style averaged-embedding model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

pub mod fasttext;
pub mod logreg;

pub use fasttext::{FastTextConfig, FastTextModel};
pub use logreg::LogRegModel;

pub const N_CLASSES: usize = 3;

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label_code: u8,
    pub probabilities: [f64; N_CLASSES],
}

impl Prediction {
    pub fn from_probabilities(p: &[f64]) -> Self {
        let mut probabilities = [0.0; N_CLASSES];
        probabilities.copy_from_slice(&p[..N_CLASSES]);
        Prediction {
            label_code: argmax(&probabilities) as u8,
            probabilities,
        }
    }

    pub fn label(&self) -> Label {
        Label::from_code(self.label_code).expect("label code in range")
    }
}

/// Cross-entropy of `p` against `label`, scaled by `weight`, and its
/// gradient with respect to the logits that produced `p`.
pub(crate) fn ce_logit_gradient(p: &[f64], label: usize, weight: f64) -> (f64, [f64; N_CLASSES]) {
    let mut g = [0.0; N_CLASSES];
    for c in 0..N_CLASSES {
        g[c] = weight * (p[c] - if c == label { 1.0 } else { 0.0 });
    }
    (-weight * p[label].max(f64::MIN_POSITIVE).ln(), g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Inverse-time decay: `lr / (1 + lr_decay * t / n_examples)`. Only the
    /// logistic-regression trainer uses it; fastText decays linearly to 0.
    #[serde(default)]
    pub lr_decay: f64,
    pub l2: f64,
    pub seed: u64,
    #[serde(default)]
    pub class_weights: Option<BTreeMap<Label, f64>>,
}

impl TrainConfig {
    pub fn logreg_default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.5,
            lr_decay: 1.0,
            l2: 1e-6,
            seed: 42,
            class_weights: None,
        }
    }

    pub fn fasttext_default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.1,
            lr_decay: 0.0,
            l2: 0.0,
            seed: 42,
            class_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.l2 < 0.0 || self.lr_decay < 0.0 {
            return Err(Error::Config("l2 and lr_decay must be non-negative".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.values().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Config("class weights must be positive and finite".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn weights(&self) -> [f64; N_CLASSES] {
        let mut w = [1.0; N_CLASSES];
        if let Some(map) = &self.class_weights {
            for (label, &v) in map {
                w[label.code() as usize] = v;
            }
        }
        w
    }
}

/// Mean training loss per epoch, in epoch order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    #[serde(default)]
    pub skipped_examples: usize,
}

pub(crate) fn require_all_classes(labels: impl Iterator<Item = u8>) -> Result<[usize; N_CLASSES]> {
    let mut counts = [0usize; N_CLASSES];
    for l in labels {
        let slot = counts
            .get_mut(l as usize)
            .ok_or_else(|| Error::Data(format!("label code {l} out of range")))?;
        *slot += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "class {} is absent from the training data",
            Label::from_code(missing as u8).unwrap()
        )));
    }
    Ok(counts)
}
