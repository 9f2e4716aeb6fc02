//! Mini-batch Adam training of the encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    encode_tokens, EncoderWeights, Precision, Real, TokenVocab, TransformerClassifier, TransformerConfig, Weights,
};
use crate::error::{Error, Result};
use crate::linear::{require_all_classes, TrainLog};
use crate::normalize::CleanRecord;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub learning_rate: f64,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Real> Adam<F> {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` along `grads`.
    pub fn step(&mut self, params: &mut [F], grads: &[F]) {
        self.t += 1;
        let c = |x: f64| F::from_f64(x).unwrap();
        let (b1, b2) = (c(ADAM_BETA1), c(ADAM_BETA2));
        let step = c(self.learning_rate / (1.0 - ADAM_BETA1.powi(self.t)));
        let corr2 = c(1.0 / (1.0 - ADAM_BETA2.powi(self.t)));
        let eps = c(ADAM_EPS);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (F::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (F::one() - b2) * g * g;
            params[i] -= step * self.m[i] / ((self.v[i] * corr2).sqrt() + eps);
        }
    }
}

fn softmax<F: Real>(z: &[F]) -> Vec<F> {
    let max = z.iter().copied().fold(F::neg_infinity(), F::max);
    let e: Vec<F> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of one sequence without dropout, accumulating
/// `scale * gradient` into `grads`.
pub fn example_loss_and_gradient<F: Real>(
    w: &EncoderWeights<F>,
    ids: &[u32],
    label: usize,
    scale: F,
    grads: &mut [F],
) -> Result<F> {
    step_example::<F, ChaCha8Rng>(w, ids, label, scale, grads, None)
}

/// Cross-entropy of one sequence without dropout.
pub fn example_loss<F: Real>(w: &EncoderWeights<F>, ids: &[u32], label: usize) -> Result<F> {
    let p = softmax(&w.logits(ids)?);
    Ok(-p[label].max(F::min_positive_value()).ln())
}

fn step_example<F: Real, R: rand::Rng>(
    w: &EncoderWeights<F>,
    ids: &[u32],
    label: usize,
    scale: F,
    grads: &mut [F],
    rng: Option<&mut R>,
) -> Result<F> {
    let cache = w.forward(ids, rng)?;
    let p = softmax(&cache.logits);
    let loss = -p[label].max(F::min_positive_value()).ln();
    let dlogits: Vec<F> = p
        .iter()
        .enumerate()
        .map(|(c, &pc)| scale * (pc - if c == label { F::one() } else { F::zero() }))
        .collect();
    w.backward(&cache, &dlogits, grads);
    Ok(loss)
}

/// Trains in place: seeded shuffles (`seed + 1`), dropout stream
/// (`seed + 2`), batch-mean cross-entropy, one Adam step per batch.
pub fn fit<F: Real>(
    w: &mut EncoderWeights<F>,
    data: &[(Vec<u32>, u8)],
    cfg: &TransformerConfig,
    seed: u64,
) -> Result<TrainLog> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let mut adam = Adam::<F>::new(w.params.len(), cfg.learning_rate);
    let mut grads = vec![F::zero(); w.params.len()];
    let mut log = TrainLog::default();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = F::zero());
            let scale = F::one() / F::from_usize(batch.len()).unwrap();
            for &i in batch {
                let (ids, y) = &data[i];
                let l = step_example(w, ids, *y as usize, scale, &mut grads, Some(&mut dropout_rng))?;
                total += l.to_f64().unwrap();
            }
            adam.step(&mut w.params, &grads);
        }
        if !w.all_finite() {
            return Err(Error::Data("transformer weights diverged to non-finite values".into()));
        }
        log.epoch_loss.push(total / data.len().max(1) as f64);
    }
    Ok(log)
}

/// Builds the vocabulary from `data`, initializes with `seed` and trains
/// for `cfg.epochs` epochs (zero epochs returns the initialization).
pub fn train_classifier(
    data: &[CleanRecord],
    cfg: &TransformerConfig,
    seed: u64,
) -> Result<(TransformerClassifier, TrainLog)> {
    cfg.validate()?;
    require_all_classes(data.iter().map(|r| r.label_code))?;
    let vocab = TokenVocab::fit(data.iter().map(|r| r.text.as_str()), cfg.max_vocab)?;
    let encoded: Vec<(Vec<u32>, u8)> = data
        .iter()
        .map(|r| (encode_tokens(&r.text, &vocab, cfg), r.label_code))
        .collect();
    let (weights, log) = match cfg.precision {
        Precision::Single => {
            let mut w = EncoderWeights::<f32>::init(cfg, vocab.n_tokens(), seed)?;
            let log = fit(&mut w, &encoded, cfg, seed)?;
            (Weights::Single(w), log)
        }
        Precision::Double => {
            let mut w = EncoderWeights::<f64>::init(cfg, vocab.n_tokens(), seed)?;
            let log = fit(&mut w, &encoded, cfg, seed)?;
            (Weights::Double(w), log)
        }
    };
    Ok((
        TransformerClassifier {
            config: cfg.clone(),
            vocab,
            weights,
        },
        log,
    ))
}
