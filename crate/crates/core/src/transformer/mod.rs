//! Small transformer encoder trained from scratch, with a CLS-pooled
//! classification head.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{tokenize, Vocabulary};
use crate::linear::{softmax, Prediction};

pub mod engine;
pub mod params;
pub mod train;

pub use engine::ForwardCache;
pub use params::{EncoderWeights, Layout, Span};
pub use train::{train_classifier, Adam};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const N_SPECIALS: usize = 3;

/// Scalar type of the encoder. `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
}

impl<T> Real for T where
    T: Float + FromPrimitive + Sum + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    /// Cap on corpus terms; the embedding table adds the three specials.
    pub max_vocab: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub n_classes: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub precision: Precision,
}

impl Default for TransformerConfig {
    /// Desk-scale defaults for from-scratch training.
    fn default() -> Self {
        TransformerConfig {
            max_vocab: 20_000,
            max_len: 200,
            d_model: 64,
            n_heads: 2,
            n_layers: 2,
            d_ff: 128,
            dropout: 0.1,
            n_classes: 3,
            learning_rate: 1e-3,
            epochs: 4,
            batch_size: 32,
            precision: Precision::Single,
        }
    }
}

impl TransformerConfig {
    /// Fine-tuning scale hyperparameters.
    pub fn full_scale() -> Self {
        TransformerConfig {
            learning_rate: 3e-5,
            batch_size: 100,
            ..Self::default()
        }
    }

    /// One layer, one head, `d_model` 8, no dropout, double precision.
    pub fn tiny() -> Self {
        TransformerConfig {
            max_vocab: 50,
            max_len: 16,
            d_model: 8,
            n_heads: 1,
            n_layers: 1,
            d_ff: 16,
            dropout: 0.0,
            precision: Precision::Double,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.n_classes != 3 {
            return Err(Error::Config("n_classes must be 3".into()));
        }
        if self.d_ff == 0 || self.n_layers == 0 || self.max_vocab == 0 {
            return Err(Error::Config("d_ff, n_layers and max_vocab must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("learning_rate and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Whitespace vocabulary with specials `PAD`, `CLS`, `UNK` at ids 0..3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVocab {
    pub terms: Vocabulary,
}

impl TokenVocab {
    pub fn fit<I, S>(docs: I, max_vocab: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Ok(TokenVocab {
            terms: Vocabulary::fit(docs, 1, max_vocab)?,
        })
    }

    /// Embedding rows needed: corpus terms plus specials.
    pub fn n_tokens(&self) -> usize {
        self.terms.len() + N_SPECIALS
    }

    pub fn id(&self, token: &str) -> u32 {
        self.terms.get(token).map_or(UNK_ID, |i| i + N_SPECIALS as u32)
    }
}

/// `[CLS]` followed by token ids, truncated to `max_len` ids in total.
pub fn encode_tokens(text: &str, vocab: &TokenVocab, cfg: &TransformerConfig) -> Vec<u32> {
    std::iter::once(CLS_ID)
        .chain(tokenize(text).into_iter().map(|t| vocab.id(t)))
        .take(cfg.max_len)
        .collect()
}

/// Right-pads every sequence with PAD to the longest one.
pub fn pad_batch(seqs: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut p = s.clone();
            p.resize(len, PAD_ID);
            p
        })
        .collect()
}

/// Batch logits, one row per (padded) sequence.
pub fn forward_batch<F: Real>(w: &EncoderWeights<F>, batch: &[Vec<u32>]) -> Result<Vec<Vec<F>>> {
    batch.iter().map(|ids| w.logits(ids)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    Single(EncoderWeights<f32>),
    Double(EncoderWeights<f64>),
}

impl Weights {
    pub fn precision(&self) -> Precision {
        match self {
            Weights::Single(_) => Precision::Single,
            Weights::Double(_) => Precision::Double,
        }
    }

    pub fn logits(&self, ids: &[u32]) -> Result<Vec<f64>> {
        Ok(match self {
            Weights::Single(w) => w.logits(ids)?.into_iter().map(f64::from).collect(),
            Weights::Double(w) => w.logits(ids)?,
        })
    }

    pub fn all_finite(&self) -> bool {
        match self {
            Weights::Single(w) => w.all_finite(),
            Weights::Double(w) => w.all_finite(),
        }
    }
}

/// A trained encoder with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerClassifier {
    pub config: TransformerConfig,
    pub vocab: TokenVocab,
    pub weights: Weights,
}

impl TransformerClassifier {
    pub fn predict(&self, text: &str) -> Result<Prediction> {
        let ids = encode_tokens(text, &self.vocab, &self.config);
        let z = self.weights.logits(&ids)?;
        Ok(Prediction::from_probabilities(&softmax(&z)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> TokenVocab {
        TokenVocab::fit(["crash error", "feature request", "how to"], 100).unwrap()
    }

    #[test]
    fn defaults_validate() {
        assert!(TransformerConfig::default().validate().is_ok());
        assert!(TransformerConfig::full_scale().validate().is_ok());
        assert!(TransformerConfig::tiny().validate().is_ok());
        let bad = TransformerConfig {
            n_heads: 3,
            ..TransformerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TransformerConfig {
            dropout: 1.0,
            ..TransformerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TransformerConfig {
            max_len: 0,
            ..TransformerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_scale_values() {
        let c = TransformerConfig::full_scale();
        assert_eq!((c.learning_rate, c.epochs, c.max_len, c.batch_size), (3e-5, 4, 200, 100));
    }

    #[test]
    fn encode_empty_is_cls() {
        assert_eq!(encode_tokens("", &vocab(), &TransformerConfig::default()), vec![CLS_ID]);
    }

    #[test]
    fn encode_known_and_unknown() {
        let v = vocab();
        let ids = encode_tokens("crash zzz", &v, &TransformerConfig::default());
        assert_eq!(ids, vec![CLS_ID, v.id("crash"), UNK_ID]);
        assert!(v.id("crash") >= N_SPECIALS as u32);
    }

    #[test]
    fn encode_truncates_to_max_len() {
        let text = vec!["crash"; 300].join(" ");
        assert_eq!(encode_tokens(&text, &vocab(), &TransformerConfig::default()).len(), 200);
    }

    #[test]
    fn pad_batch_pads_right() {
        let b = pad_batch(&[vec![1, 5], vec![1, 5, 6, 7]]);
        assert_eq!(b[0], vec![1, 5, 0, 0]);
        assert_eq!(b[1], vec![1, 5, 6, 7]);
    }
}
