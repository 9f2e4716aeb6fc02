//! fastText-style classifier: the document vector is the count-weighted mean
//! of its hashed n-gram embeddings, followed by a linear softmax layer.
//!
//! The embedding table is `n_buckets x dim` in principle, but rows are only
//! materialized once training touches them. An untouched row always equals
//! its seeded initial value, so lazily generating it is indistinguishable
//! from a dense table.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ce_logit_gradient, require_all_classes, softmax, Prediction, TrainConfig, TrainLog, N_CLASSES};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, HashedNgramExtractor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FastTextConfig {
    pub dim: usize,
    pub extractor: HashedNgramExtractor,
}

impl Default for FastTextConfig {
    fn default() -> Self {
        FastTextConfig {
            dim: 100,
            extractor: HashedNgramExtractor::default(),
        }
    }
}

impl FastTextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("fastText dim must be at least 1".into()));
        }
        self.extractor.validate()
    }
}

#[derive(Debug, Clone)]
pub struct FastTextModel {
    pub config: FastTextConfig,
    /// Seed for the lazily generated embedding rows.
    pub init_seed: u64,
    slots: HashMap<u32, usize>,
    buckets: Vec<u32>,
    table: Vec<f64>,
    /// Row-major `N_CLASSES x dim`.
    pub output: Vec<f64>,
    pub bias: [f64; N_CLASSES],
    /// Training class frequencies; the prediction for an empty document.
    pub class_prior: [f64; N_CLASSES],
}

/// Equal when every weight is equal; the order rows were materialized in
/// does not matter.
impl PartialEq for FastTextModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.init_seed == other.init_seed
            && self.output == other.output
            && self.bias == other.bias
            && self.class_prior == other.class_prior
            && self.stored_rows() == other.stored_rows()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl FastTextModel {
    pub fn new(config: FastTextConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        Ok(FastTextModel {
            config,
            init_seed,
            slots: HashMap::new(),
            buckets: Vec::new(),
            table: Vec::new(),
            output: vec![0.0; N_CLASSES * dim],
            bias: [0.0; N_CLASSES],
            class_prior: [1.0 / N_CLASSES as f64; N_CLASSES],
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Initial value of a bucket's embedding: uniform in `[-1/dim, 1/dim)`.
    pub fn initial_row(&self, bucket: u32) -> Vec<f64> {
        let dim = self.dim();
        let bound = 1.0 / dim as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.init_seed ^ splitmix64(bucket as u64)));
        (0..dim).map(|_| rng.random_range(-bound..bound)).collect()
    }

    pub fn row(&self, bucket: u32) -> std::borrow::Cow<'_, [f64]> {
        let dim = self.dim();
        match self.slots.get(&bucket) {
            Some(&s) => std::borrow::Cow::Borrowed(&self.table[s * dim..(s + 1) * dim]),
            None => std::borrow::Cow::Owned(self.initial_row(bucket)),
        }
    }

    fn row_mut(&mut self, bucket: u32) -> &mut [f64] {
        let dim = self.dim();
        let slot = match self.slots.get(&bucket) {
            Some(&s) => s,
            None => {
                let init = self.initial_row(bucket);
                let s = self.buckets.len();
                self.buckets.push(bucket);
                self.table.extend_from_slice(&init);
                self.slots.insert(bucket, s);
                s
            }
        };
        &mut self.table[slot * dim..(slot + 1) * dim]
    }

    /// Materialized rows in ascending bucket order.
    pub fn stored_rows(&self) -> Vec<(u32, &[f64])> {
        let dim = self.dim();
        let mut rows: Vec<_> = self
            .buckets
            .iter()
            .map(|&b| {
                let s = self.slots[&b];
                (b, &self.table[s * dim..(s + 1) * dim])
            })
            .collect();
        rows.sort_unstable_by_key(|(b, _)| *b);
        rows
    }

    pub fn set_row(&mut self, bucket: u32, values: &[f64]) -> Result<()> {
        if values.len() != self.dim() {
            return Err(Error::Shape(format!(
                "embedding row has {} values, expected {}",
                values.len(),
                self.dim()
            )));
        }
        if bucket >= self.config.extractor.n_buckets {
            return Err(Error::Shape(format!("bucket {bucket} out of range")));
        }
        self.row_mut(bucket).copy_from_slice(values);
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        let all = self.table.iter().chain(&self.output).chain(&self.bias);
        if all.clone().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Data("fastText weights are not finite".into()))
        }
    }

    pub fn features<S: AsRef<str>>(&self, tokens: &[S]) -> FeatureVector {
        self.config.extractor.hash_ngrams(tokens)
    }

    /// Count-weighted mean embedding; `None` for an empty document.
    pub fn hidden(&self, x: &FeatureVector) -> Option<Vec<f64>> {
        let total: f64 = x.entries().iter().map(|&(_, c)| c).sum();
        if x.is_empty() || total == 0.0 {
            return None;
        }
        let mut h = vec![0.0; self.dim()];
        for &(b, c) in x.entries() {
            let row = self.row(b);
            let w = c / total;
            for (hk, rk) in h.iter_mut().zip(row.iter()) {
                *hk += w * rk;
            }
        }
        Some(h)
    }

    fn logits_from_hidden(&self, h: &[f64]) -> [f64; N_CLASSES] {
        let dim = self.dim();
        let mut z = self.bias;
        for (c, zc) in z.iter_mut().enumerate() {
            *zc += self.output[c * dim..(c + 1) * dim]
                .iter()
                .zip(h)
                .map(|(u, v)| u * v)
                .sum::<f64>();
        }
        z
    }

    pub fn predict_features(&self, x: &FeatureVector) -> Prediction {
        match self.hidden(x) {
            Some(h) => Prediction::from_probabilities(&softmax(&self.logits_from_hidden(&h))),
            None => Prediction::from_probabilities(&self.class_prior),
        }
    }

    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Prediction {
        self.predict_features(&self.features(tokens))
    }

    /// Mean weighted cross-entropy over non-empty documents plus
    /// `l2/2 * |U|^2`, with gradients for the output matrix, bias, and every
    /// embedding row the data touches.
    pub fn loss_and_gradient(
        &self,
        data: &[(FeatureVector, u8)],
        l2: f64,
        class_weights: [f64; N_CLASSES],
    ) -> (f64, FastTextGradient) {
        let dim = self.dim();
        let mut grad = FastTextGradient {
            output: vec![0.0; self.output.len()],
            bias: [0.0; N_CLASSES],
            rows: BTreeMap::new(),
        };
        let used: Vec<_> = data.iter().filter_map(|(x, y)| self.hidden(x).map(|h| (x, *y as usize, h))).collect();
        let n = used.len().max(1) as f64;
        let mut loss = 0.0;
        for (x, y, h) in used {
            let p = softmax(&self.logits_from_hidden(&h));
            let (l, g) = ce_logit_gradient(&p, y, class_weights[y]);
            loss += l / n;
            let mut dh = vec![0.0; dim];
            for c in 0..N_CLASSES {
                grad.bias[c] += g[c] / n;
                for k in 0..dim {
                    grad.output[c * dim + k] += g[c] * h[k] / n;
                    dh[k] += self.output[c * dim + k] * g[c];
                }
            }
            let total: f64 = x.entries().iter().map(|&(_, c)| c).sum();
            for &(b, cnt) in x.entries() {
                let row = grad.rows.entry(b).or_insert_with(|| vec![0.0; dim]);
                for k in 0..dim {
                    row[k] += cnt / total * dh[k] / n;
                }
            }
        }
        loss += 0.5 * l2 * self.output.iter().map(|u| u * u).sum::<f64>();
        for (g, u) in grad.output.iter_mut().zip(&self.output) {
            *g += l2 * u;
        }
        (loss, grad)
    }

    /// SGD with a learning rate decaying linearly to zero over all steps.
    /// Empty documents are skipped and counted in the log.
    pub fn train(
        data: &[(FeatureVector, u8)],
        config: FastTextConfig,
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainLog)> {
        cfg.validate()?;
        let mut model = FastTextModel::new(config, cfg.seed)?;
        let usable: Vec<usize> = (0..data.len()).filter(|&i| !data[i].0.is_empty()).collect();
        let counts = require_all_classes(usable.iter().map(|&i| data[i].1))?;
        let n_used = usable.len() as f64;
        for (p, c) in model.class_prior.iter_mut().zip(counts) {
            *p = c as f64 / n_used;
        }
        let mut log = TrainLog {
            skipped_examples: data.len() - usable.len(),
            ..Default::default()
        };
        let class_weights = cfg.weights();
        let dim = model.dim();
        let total_steps = (cfg.epochs * usable.len()) as f64;
        let mut order = usable;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut t = 0usize;
        let mut dh = vec![0.0; dim];

        for _epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for &i in &order {
                let (x, y) = &data[i];
                let y = *y as usize;
                let lr = cfg.learning_rate * (1.0 - t as f64 / total_steps);
                let h = model.hidden(x).expect("empty documents were filtered");
                let p = softmax(&model.logits_from_hidden(&h));
                let (l, g) = ce_logit_gradient(&p, y, class_weights[y]);
                epoch_loss += l;

                dh.iter_mut().for_each(|v| *v = 0.0);
                for c in 0..N_CLASSES {
                    let row = &mut model.output[c * dim..(c + 1) * dim];
                    for k in 0..dim {
                        dh[k] += row[k] * g[c];
                        row[k] -= lr * (g[c] * h[k] + cfg.l2 * row[k]);
                    }
                    model.bias[c] -= lr * g[c];
                }
                let total: f64 = x.entries().iter().map(|&(_, c)| c).sum();
                for &(b, cnt) in x.entries() {
                    let scale = lr * cnt / total;
                    for (e, d) in model.row_mut(b).iter_mut().zip(&dh) {
                        *e -= scale * d;
                    }
                }
                t += 1;
            }
            log.epoch_loss.push(epoch_loss / n_used);
        }
        model.check_finite()?;
        Ok((model, log))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastTextGradient {
    pub output: Vec<f64>,
    pub bias: [f64; N_CLASSES],
    pub rows: BTreeMap<u32, Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tokenize;

    fn small_config() -> FastTextConfig {
        FastTextConfig {
            dim: 8,
            extractor: HashedNgramExtractor {
                n_buckets: 1 << 12,
                ..Default::default()
            },
        }
    }

    fn corpus() -> Vec<(String, u8)> {
        let keys = [["crash", "error", "panic"], ["feature", "support", "add"], ["how", "why", "help"]];
        let noise = ["the", "a", "it", "when", "with", "this", "for", "on"];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        (0..300)
            .map(|i| {
                let c = i % 3;
                let mut words: Vec<&str> = (0..6).map(|_| noise[rng.random_range(0..noise.len())]).collect();
                let pos = rng.random_range(0..words.len());
                words.insert(pos, keys[c][rng.random_range(0..3)]);
                (words.join(" "), c as u8)
            })
            .collect()
    }

    fn small_data_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 25,
            learning_rate: 0.5,
            ..TrainConfig::fasttext_default()
        }
    }

    fn featurize(m: &FastTextConfig, docs: &[(String, u8)]) -> Vec<(FeatureVector, u8)> {
        docs.iter()
            .map(|(t, y)| (m.extractor.hash_ngrams(&tokenize(t)), *y))
            .collect()
    }

    #[test]
    fn separable_keywords_are_learned() {
        let docs = corpus();
        let data = featurize(&small_config(), &docs);
        let (m, log) = FastTextModel::train(&data, small_config(), &small_data_cfg()).unwrap();
        let acc = data.iter().filter(|(x, y)| m.predict_features(x).label_code == *y).count() as f64
            / data.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}, log {log:?}");
    }

    #[test]
    fn single_document_is_memorized() {
        // Every class must be present, so one document per class; the
        // memorization check is on each of them.
        let docs = vec![
            ("segfault on start".to_string(), 0u8),
            ("please add dark mode".to_string(), 1),
            ("how do i configure".to_string(), 2),
        ];
        let data = featurize(&small_config(), &docs);
        let (m, _) = FastTextModel::train(&data, small_config(), &small_data_cfg()).unwrap();
        for (x, y) in &data {
            let p = m.predict_features(x);
            assert!(p.probabilities[*y as usize] > 1.0 / 3.0);
        }
    }

    #[test]
    fn empty_documents_are_skipped_and_predict_prior() {
        let mut docs = corpus();
        docs.push((String::new(), 0));
        let data = featurize(&small_config(), &docs);
        let (m, log) = FastTextModel::train(&data, small_config(), &TrainConfig::fasttext_default()).unwrap();
        assert_eq!(log.skipped_examples, 1);
        let p = m.predict::<&str>(&[]);
        assert_eq!(p.probabilities, m.class_prior);
        assert_eq!(p.label_code, 0);
    }

    #[test]
    fn lazy_rows_equal_initialization() {
        let m = FastTextModel::new(small_config(), 3).unwrap();
        assert_eq!(m.row(17).into_owned(), m.initial_row(17));
        assert_eq!(m.initial_row(17), m.initial_row(17));
        assert_ne!(m.initial_row(17), m.initial_row(18));
        let bound = 1.0 / 8.0;
        assert!(m.initial_row(5).iter().all(|v| (-bound..bound).contains(v)));
    }

    #[test]
    fn deterministic_for_seed() {
        let data = featurize(&small_config(), &corpus());
        let cfg = TrainConfig::fasttext_default();
        let (a, _) = FastTextModel::train(&data, small_config(), &cfg).unwrap();
        let (b, _) = FastTextModel::train(&data, small_config(), &cfg).unwrap();
        assert_eq!(a.output, b.output);
        assert_eq!(a.stored_rows(), b.stored_rows());
    }

    #[test]
    fn missing_class_errors() {
        let docs = vec![("a b".to_string(), 0u8), ("c d".to_string(), 1)];
        let data = featurize(&small_config(), &docs);
        assert!(FastTextModel::train(&data, small_config(), &TrainConfig::fasttext_default()).is_err());
    }
}
