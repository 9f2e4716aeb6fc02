//! Flat parameter storage for the encoder. Every tensor is a `Span` into one
//! contiguous vector, which keeps the optimizer, gradient checks and
//! serialization layout-agnostic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Real, TransformerConfig};
use crate::error::{Error, Result};

pub const INIT_STD: f64 = 0.02;

/// A `rows x cols` row-major tensor at `offset` in the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpans {
    pub wq: Span,
    pub bq: Span,
    pub wk: Span,
    pub bk: Span,
    pub wv: Span,
    pub bv: Span,
    pub wo: Span,
    pub bo: Span,
    pub ln1_gain: Span,
    pub ln1_bias: Span,
    pub w1: Span,
    pub b1: Span,
    pub w2: Span,
    pub b2: Span,
    pub ln2_gain: Span,
    pub ln2_bias: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub token_embedding: Span,
    pub position_embedding: Span,
    pub layers: Vec<LayerSpans>,
    pub pool_w: Span,
    pub pool_b: Span,
    pub classifier_w: Span,
    pub classifier_b: Span,
    /// Every span with its name and initializer, in storage order.
    pub named: Vec<(String, Span, Init)>,
    pub total: usize,
}

struct Builder {
    offset: usize,
    named: Vec<(String, Span, Init)>,
}

impl Builder {
    fn take(&mut self, name: String, rows: usize, cols: usize, init: Init) -> Span {
        let span = Span {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += span.len();
        self.named.push((name, span, init));
        span
    }
}

impl Layout {
    /// Weight matrices are stored `in x out`, so a projection is `x W + b`.
    pub fn new(cfg: &TransformerConfig, n_tokens: usize) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff;
        let mut b = Builder {
            offset: 0,
            named: Vec::new(),
        };
        let token_embedding = b.take("token_embedding".into(), n_tokens, d, Init::Normal);
        let position_embedding = b.take("position_embedding".into(), cfg.max_len, d, Init::Normal);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let mut t = |name: &str, rows, cols, init| b.take(format!("layer{l}.{name}"), rows, cols, init);
                LayerSpans {
                    wq: t("wq", d, d, Init::Normal),
                    bq: t("bq", 1, d, Init::Zeros),
                    wk: t("wk", d, d, Init::Normal),
                    bk: t("bk", 1, d, Init::Zeros),
                    wv: t("wv", d, d, Init::Normal),
                    bv: t("bv", 1, d, Init::Zeros),
                    wo: t("wo", d, d, Init::Normal),
                    bo: t("bo", 1, d, Init::Zeros),
                    ln1_gain: t("ln1_gain", 1, d, Init::Ones),
                    ln1_bias: t("ln1_bias", 1, d, Init::Zeros),
                    w1: t("w1", d, f, Init::Normal),
                    b1: t("b1", 1, f, Init::Zeros),
                    w2: t("w2", f, d, Init::Normal),
                    b2: t("b2", 1, d, Init::Zeros),
                    ln2_gain: t("ln2_gain", 1, d, Init::Ones),
                    ln2_bias: t("ln2_bias", 1, d, Init::Zeros),
                }
            })
            .collect();
        let pool_w = b.take("pool_w".into(), d, d, Init::Normal);
        let pool_b = b.take("pool_b".into(), 1, d, Init::Zeros);
        let classifier_w = b.take("classifier_w".into(), d, cfg.n_classes, Init::Normal);
        let classifier_b = b.take("classifier_b".into(), 1, cfg.n_classes, Init::Zeros);
        Layout {
            token_embedding,
            position_embedding,
            layers,
            pool_w,
            pool_b,
            classifier_w,
            classifier_b,
            total: b.offset,
            named: b.named,
        }
    }
}

/// Encoder weights: configuration, layout and the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<F> {
    pub config: TransformerConfig,
    pub n_tokens: usize,
    pub layout: Layout,
    pub params: Vec<F>,
}

impl<F: Real> EncoderWeights<F> {
    /// Seeded initialization: N(0, 0.02) matrices and embeddings, zero
    /// biases, unit layer-norm gains.
    pub fn init(config: &TransformerConfig, n_tokens: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, n_tokens);
        let mut params = vec![F::zero(); layout.total];
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, span, init) in &layout.named {
            let dst = &mut params[span.range()];
            match init {
                Init::Normal => dst
                    .iter_mut()
                    .for_each(|p| *p = F::from_f64(normal.sample(&mut rng)).unwrap()),
                Init::Zeros => {}
                Init::Ones => dst.iter_mut().for_each(|p| *p = F::one()),
            }
        }
        Ok(EncoderWeights {
            config: config.clone(),
            n_tokens,
            layout,
            params,
        })
    }

    pub fn from_params(config: &TransformerConfig, n_tokens: usize, params: Vec<F>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, n_tokens);
        if layout.total != params.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} values, layout needs {}",
                params.len(),
                layout.total
            )));
        }
        Ok(EncoderWeights {
            config: config.clone(),
            n_tokens,
            layout,
            params,
        })
    }

    pub fn get(&self, span: Span) -> &[F] {
        &self.params[span.range()]
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn cast<G: Real>(&self) -> EncoderWeights<G> {
        EncoderWeights {
            config: self.config.clone(),
            n_tokens: self.n_tokens,
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| G::from(*p).unwrap()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous_and_complete() {
        let cfg = TransformerConfig::tiny();
        let layout = Layout::new(&cfg, 10);
        let mut expected = 0;
        for (_, span, _) in &layout.named {
            assert_eq!(span.offset, expected);
            expected += span.len();
        }
        assert_eq!(expected, layout.total);
        let d = cfg.d_model;
        let per_layer = 4 * (d * d + d) + 4 * d + d * cfg.d_ff + cfg.d_ff + cfg.d_ff * d + d;
        let want = 10 * d + cfg.max_len * d + cfg.n_layers * per_layer + d * d + d + d * 3 + 3;
        assert_eq!(layout.total, want);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = TransformerConfig::tiny();
        let a = EncoderWeights::<f64>::init(&cfg, 10, 1).unwrap();
        let b = EncoderWeights::<f64>::init(&cfg, 10, 1).unwrap();
        let c = EncoderWeights::<f64>::init(&cfg, 10, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
        let gain = a.get(a.layout.layers[0].ln1_gain);
        assert!(gain.iter().all(|&g| g == 1.0));
        assert!(a.get(a.layout.pool_b).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn init_std_is_close_to_target() {
        let cfg = TransformerConfig::default();
        let w = EncoderWeights::<f64>::init(&cfg, 500, 3).unwrap();
        let emb = w.get(w.layout.token_embedding);
        let n = emb.len() as f64;
        let mean = emb.iter().sum::<f64>() / n;
        let std = (emb.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-3);
        assert!((std - INIT_STD).abs() < 1e-3, "{std}");
    }

    #[test]
    fn wrong_param_count_fails_fast() {
        let cfg = TransformerConfig::tiny();
        assert!(matches!(
            EncoderWeights::<f32>::from_params(&cfg, 10, vec![0.0; 7]),
            Err(Error::Shape(_))
        ));
    }
}
