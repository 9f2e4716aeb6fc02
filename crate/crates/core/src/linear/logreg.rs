//! Multinomial logistic regression trained by per-example SGD.
//!
//! L2 shrinkage uses the scaled-weights trick: weights are stored as
//! `scale * v`, so the shrink is O(1) and each step only touches the
//! example's non-zero features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ce_logit_gradient, require_all_classes, softmax, Prediction, TrainConfig, TrainLog, N_CLASSES};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub n_features: usize,
    /// Row-major `N_CLASSES x n_features`.
    pub weights: Vec<f64>,
    pub bias: [f64; N_CLASSES],
}

impl LogRegModel {
    pub fn zeros(n_features: usize) -> Self {
        LogRegModel {
            n_features,
            weights: vec![0.0; N_CLASSES * n_features],
            bias: [0.0; N_CLASSES],
        }
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.n_features + feature]
    }

    pub fn logits(&self, x: &FeatureVector) -> [f64; N_CLASSES] {
        let mut z = self.bias;
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.weights[c * self.n_features..(c + 1) * self.n_features];
            for &(j, w) in x.entries() {
                if let Some(v) = row.get(j as usize) {
                    *zc += v * w;
                }
            }
        }
        z
    }

    pub fn predict(&self, x: &FeatureVector) -> Prediction {
        Prediction::from_probabilities(&softmax(&self.logits(x)))
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.weights.iter().chain(&self.bias).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Data("logistic regression weights are not finite".into()))
        }
    }

    /// Mean weighted cross-entropy plus `l2/2 * |W|^2`, with its gradient
    /// (weights, bias).
    pub fn loss_and_gradient(
        &self,
        data: &[(FeatureVector, u8)],
        l2: f64,
        class_weights: [f64; N_CLASSES],
    ) -> (f64, Vec<f64>, [f64; N_CLASSES]) {
        let n = data.len().max(1) as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = [0.0; N_CLASSES];
        let mut loss = 0.0;
        for (x, y) in data {
            let y = *y as usize;
            let p = softmax(&self.logits(x));
            let (l, g) = ce_logit_gradient(&p, y, class_weights[y]);
            loss += l;
            for c in 0..N_CLASSES {
                gb[c] += g[c] / n;
                for &(j, v) in x.entries() {
                    gw[c * self.n_features + j as usize] += g[c] * v / n;
                }
            }
        }
        loss /= n;
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        loss += 0.5 * l2 * sq;
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (loss, gw, gb)
    }

    /// SGD over seeded shuffles with inverse-time learning-rate decay.
    pub fn train(data: &[(FeatureVector, u8)], n_features: usize, cfg: &TrainConfig) -> Result<(Self, TrainLog)> {
        cfg.validate()?;
        require_all_classes(data.iter().map(|(_, y)| *y))?;
        if let Some(bad) = data.iter().filter_map(|(x, _)| x.max_index()).find(|&i| i as usize >= n_features) {
            return Err(Error::Shape(format!("feature index {bad} exceeds n_features {n_features}")));
        }
        let class_weights = cfg.weights();
        let n = data.len();
        let mut v = vec![0.0; N_CLASSES * n_features];
        let mut scale = 1.0f64;
        let mut bias = [0.0; N_CLASSES];
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut log = TrainLog::default();
        let mut t = 0usize;

        for _epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for &i in &order {
                let (x, y) = &data[i];
                let y = *y as usize;
                let lr = cfg.learning_rate / (1.0 + cfg.lr_decay * t as f64 / n as f64);

                let mut z = bias;
                for (c, zc) in z.iter_mut().enumerate() {
                    let row = &v[c * n_features..(c + 1) * n_features];
                    let dot: f64 = x.entries().iter().map(|&(j, w)| row[j as usize] * w).sum();
                    *zc += scale * dot;
                }
                let p = softmax(&z);
                let (l, g) = ce_logit_gradient(&p, y, class_weights[y]);
                epoch_loss += l;

                scale *= 1.0 - lr * cfg.l2;
                for c in 0..N_CLASSES {
                    let step = lr * g[c] / scale;
                    let row = &mut v[c * n_features..(c + 1) * n_features];
                    for &(j, w) in x.entries() {
                        row[j as usize] -= step * w;
                    }
                    bias[c] -= lr * g[c];
                }
                if scale < 1e-9 {
                    v.iter_mut().for_each(|w| *w *= scale);
                    scale = 1.0;
                }
                t += 1;
            }
            log.epoch_loss.push(epoch_loss / n as f64);
        }

        let model = LogRegModel {
            n_features,
            weights: v.into_iter().map(|w| w * scale).collect(),
            bias,
        };
        model.check_finite()?;
        Ok((model, log))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fv(pairs: &[(u32, f64)]) -> FeatureVector {
        FeatureVector::from_pairs(pairs.iter().copied())
    }

    #[test]
    fn zero_weights_predict_class_zero() {
        let m = LogRegModel::zeros(4);
        let p = m.predict(&fv(&[(1, 1.0)]));
        assert_eq!(p.label_code, 0);
        assert!(p.probabilities.iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn favoring_weight_wins() {
        let mut m = LogRegModel::zeros(3);
        m.weights[2 * 3 + 1] = 5.0;
        assert_eq!(m.predict(&fv(&[(1, 1.0)])).label_code, 2);
    }

    #[test]
    fn crafted_probabilities() {
        // W = [[1,0],[0,2],[-1,1]], b = [0.5,0,-0.5], x = {0: 2, 1: 0.5}
        // z = [2.5, 1.0, -2.0]
        let m = LogRegModel {
            n_features: 2,
            weights: vec![1.0, 0.0, 0.0, 2.0, -1.0, 1.0],
            bias: [0.5, 0.0, -0.5],
        };
        let p = m.predict(&fv(&[(0, 2.0), (1, 0.5)]));
        let e: Vec<f64> = [2.5f64, 1.0, -2.0].iter().map(|z| z.exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..3 {
            assert!((p.probabilities[c] - e[c] / s).abs() < 1e-15);
        }
        assert_eq!(p.label_code, 0);
    }

    fn separable(per_class: usize, seed: u64) -> Vec<(FeatureVector, u8)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [(3.0, 0.0), (-1.5, 2.6), (-1.5, -2.6)];
        let mut out = Vec::new();
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for _ in 0..per_class {
                let x = cx + rng.random_range(-0.5..0.5);
                let y = cy + rng.random_range(-0.5..0.5);
                out.push((fv(&[(0, x), (1, y)]), c as u8));
            }
        }
        out
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = separable(20, 1);
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::logreg_default()
        };
        let (m, log) = LogRegModel::train(&data, 2, &cfg).unwrap();
        let correct = data.iter().filter(|(x, y)| m.predict(x).label_code == *y).count();
        assert_eq!(correct, data.len());
        assert!(log.epoch_loss.last().unwrap() < &log.epoch_loss[0]);
    }

    #[test]
    fn constant_input_learns_priors() {
        let mut data = Vec::new();
        for (c, n) in [(0u8, 60), (1, 30), (2, 10)] {
            for _ in 0..n {
                data.push((fv(&[(0, 1.0)]), c));
            }
        }
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 0.1,
            ..TrainConfig::logreg_default()
        };
        let (m, _) = LogRegModel::train(&data, 1, &cfg).unwrap();
        let p = m.predict(&fv(&[(0, 1.0)])).probabilities;
        for (got, want) in p.iter().zip([0.6, 0.3, 0.1]) {
            assert!((got - want).abs() < 0.05, "{p:?}");
        }
    }

    #[test]
    fn missing_class_errors() {
        let data = vec![(fv(&[(0, 1.0)]), 0u8), (fv(&[(0, 1.0)]), 1)];
        assert!(LogRegModel::train(&data, 1, &TrainConfig::logreg_default()).is_err());
    }

    #[test]
    fn out_of_range_feature_errors() {
        let data = vec![(fv(&[(5, 1.0)]), 0u8), (fv(&[(0, 1.0)]), 1), (fv(&[(0, 1.0)]), 2)];
        assert!(matches!(
            LogRegModel::train(&data, 2, &TrainConfig::logreg_default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let data = separable(10, 2);
        let cfg = TrainConfig::logreg_default();
        let (a, _) = LogRegModel::train(&data, 2, &cfg).unwrap();
        let (b, _) = LogRegModel::train(&data, 2, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_class_weights_match_unweighted() {
        let data = separable(10, 3);
        let cfg = TrainConfig::logreg_default();
        let weighted = TrainConfig {
            class_weights: Some(crate::corpus::Label::ALL.iter().map(|&l| (l, 1.0)).collect()),
            ..cfg.clone()
        };
        let (a, _) = LogRegModel::train(&data, 2, &cfg).unwrap();
        let (b, _) = LogRegModel::train(&data, 2, &weighted).unwrap();
        assert_eq!(a, b);
    }
}
