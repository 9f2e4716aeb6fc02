//! Forward and backward passes for one sequence.
//!
//! Post-norm encoder layers (attention, residual, layer norm, GELU
//! feed-forward, residual, layer norm), then the classification head on the
//! CLS position: `tanh(h W_p + b_p) W_c + b_c`.
//!
//! Only non-PAD positions are materialized. Attending over them alone is
//! exactly a softmax where PAD keys score negative infinity; PAD query rows
//! never reach the CLS output, so they are not computed.

use rand::Rng;

use super::params::{EncoderWeights, LayerSpans};
use super::{Real, PAD_ID};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn cst<F: Real>(x: f64) -> F {
    F::from_f64(x).unwrap()
}

/// `out[n x m] = x[n x k] * w[k x m] + b`.
fn linear<F: Real>(x: &[F], n: usize, k: usize, w: &[F], b: &[F], m: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let xi = x[i * k + p];
            if xi == F::zero() {
                continue;
            }
            let wrow = &w[p * m..(p + 1) * m];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
    out
}

/// Accumulates `dW += x^T dout`, `db += colsum(dout)` and returns
/// `dx = dout W^T`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<F: Real>(
    x: &[F],
    n: usize,
    k: usize,
    w: &[F],
    m: usize,
    dout: &[F],
    dw: &mut [F],
    db: &mut [F],
) -> Vec<F> {
    let mut dx = vec![F::zero(); n * k];
    for i in 0..n {
        let drow = &dout[i * m..(i + 1) * m];
        for (b, &d) in db.iter_mut().zip(drow) {
            *b += d;
        }
        for p in 0..k {
            let xi = x[i * k + p];
            let wrow = &w[p * m..(p + 1) * m];
            let dwrow = &mut dw[p * m..(p + 1) * m];
            let mut acc = F::zero();
            for j in 0..m {
                dwrow[j] += xi * drow[j];
                acc += drow[j] * wrow[j];
            }
            dx[i * k + p] = acc;
        }
    }
    dx
}

struct LayerNormOut<F> {
    y: Vec<F>,
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

fn layer_norm<F: Real>(x: &[F], n: usize, d: usize, gain: &[F], bias: &[F]) -> LayerNormOut<F> {
    let mut y = vec![F::zero(); n * d];
    let mut xhat = vec![F::zero(); n * d];
    let mut inv_std = vec![F::zero(); n];
    let dn = cst::<F>(d as f64);
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<F>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / dn;
        let is = F::one() / (var + cst(LN_EPS)).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let xh = (row[j] - mean) * is;
            xhat[i * d + j] = xh;
            y[i * d + j] = gain[j] * xh + bias[j];
        }
    }
    LayerNormOut { y, xhat, inv_std }
}

fn layer_norm_backward<F: Real>(
    ln: &LayerNormOut<F>,
    n: usize,
    d: usize,
    gain: &[F],
    dy: &[F],
    dgain: &mut [F],
    dbias: &mut [F],
) -> Vec<F> {
    let mut dx = vec![F::zero(); n * d];
    let dn = cst::<F>(d as f64);
    for i in 0..n {
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            let g = dy[i * d + j];
            let xh = ln.xhat[i * d + j];
            dgain[j] += g * xh;
            dbias[j] += g;
            let dxh = g * gain[j];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xh;
        }
        mean_dxhat = mean_dxhat / dn;
        mean_dxhat_xhat = mean_dxhat_xhat / dn;
        for j in 0..d {
            let dxh = dy[i * d + j] * gain[j];
            dx[i * d + j] = ln.inv_std[i] * (dxh - mean_dxhat - ln.xhat[i * d + j] * mean_dxhat_xhat);
        }
    }
    dx
}

// tanh approximation of GELU
fn gelu<F: Real>(z: F) -> F {
    let c = cst::<F>((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (z + cst::<F>(0.044715) * z * z * z);
    cst::<F>(0.5) * z * (F::one() + u.tanh())
}

fn gelu_grad<F: Real>(z: F) -> F {
    let c = cst::<F>((2.0 / std::f64::consts::PI).sqrt());
    let a = cst::<F>(0.044715);
    let t = (c * (z + a * z * z * z)).tanh();
    let half = cst::<F>(0.5);
    half * (F::one() + t) + half * z * (F::one() - t * t) * c * (F::one() + cst::<F>(3.0) * a * z * z)
}

/// Inverted dropout mask (`0` or `1/(1-p)`); empty when inactive.
fn dropout_mask<F: Real, R: Rng>(len: usize, p: f64, rng: Option<&mut R>) -> Vec<F> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = cst::<F>(1.0 / (1.0 - p));
            (0..len)
                .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
                .collect()
        }
        _ => Vec::new(),
    }
}

fn apply_mask<F: Real>(x: &mut [F], mask: &[F]) {
    if !mask.is_empty() {
        x.iter_mut().zip(mask).for_each(|(v, m)| *v *= *m);
    }
}

struct LayerCache<F> {
    input: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    /// Per head, `n x n` attention probabilities.
    attn: Vec<Vec<F>>,
    ctx: Vec<F>,
    attn_mask: Vec<F>,
    ln1: LayerNormOut<F>,
    pre_gelu: Vec<F>,
    act: Vec<F>,
    ffn_mask: Vec<F>,
    ln2: LayerNormOut<F>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache<F> {
    positions: Vec<usize>,
    ids: Vec<u32>,
    embed_mask: Vec<F>,
    layers: Vec<LayerCache<F>>,
    pooled_in: Vec<F>,
    pooled: Vec<F>,
    pool_mask: Vec<F>,
    pub logits: Vec<F>,
}

impl<F: Real> ForwardCache<F> {
    /// Attention probabilities of `layer`/`head` expanded to the full
    /// `len x len` grid; PAD rows and columns are zero.
    pub fn attention(&self, layer: usize, head: usize, len: usize) -> Vec<Vec<F>> {
        let n = self.positions.len();
        let a = &self.layers[layer].attn[head];
        let mut full = vec![vec![F::zero(); len]; len];
        for (qi, &qp) in self.positions.iter().enumerate() {
            for (kj, &kp) in self.positions.iter().enumerate() {
                full[qp][kp] = a[qi * n + kj];
            }
        }
        full
    }

    pub fn valid_positions(&self) -> &[usize] {
        &self.positions
    }
}

impl<F: Real> EncoderWeights<F> {
    /// Forward pass for one id sequence. Dropout is applied only when `rng`
    /// is given.
    pub fn forward<R: Rng>(&self, ids: &[u32], rng: Option<&mut R>) -> Result<ForwardCache<F>> {
        let cfg = &self.config;
        let d = cfg.d_model;
        let ff = cfg.d_ff;
        let heads = cfg.n_heads;
        let dh = d / heads;
        if ids.len() > cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence of {} ids exceeds max_len {}",
                ids.len(),
                cfg.max_len
            )));
        }
        if ids.first().is_none_or(|&id| id == PAD_ID) {
            return Err(Error::Shape("sequence must start with a non-PAD (CLS) token".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.n_tokens) {
            return Err(Error::Shape(format!("token id {bad} outside the {}-row embedding", self.n_tokens)));
        }
        let mut rng = rng;
        let p_drop = cfg.dropout;
        let positions: Vec<usize> = (0..ids.len()).filter(|&t| ids[t] != PAD_ID).collect();
        let n = positions.len();
        let lay = &self.layout;
        let scale = cst::<F>(1.0 / (dh as f64).sqrt());

        let tok = self.get(lay.token_embedding);
        let pos = self.get(lay.position_embedding);
        let mut x = vec![F::zero(); n * d];
        for (i, &t) in positions.iter().enumerate() {
            let id = ids[t] as usize;
            for j in 0..d {
                x[i * d + j] = tok[id * d + j] + pos[t * d + j];
            }
        }
        let embed_mask = dropout_mask(n * d, p_drop, rng.as_deref_mut());
        apply_mask(&mut x, &embed_mask);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for spans in &lay.layers {
            let q = linear(&x, n, d, self.get(spans.wq), self.get(spans.bq), d);
            let k = linear(&x, n, d, self.get(spans.wk), self.get(spans.bk), d);
            let v = linear(&x, n, d, self.get(spans.wv), self.get(spans.bv), d);
            let mut ctx = vec![F::zero(); n * d];
            let mut attn = Vec::with_capacity(heads);
            for h in 0..heads {
                let off = h * dh;
                let mut a = vec![F::zero(); n * n];
                for i in 0..n {
                    let qi = &q[i * d + off..i * d + off + dh];
                    let row = &mut a[i * n..(i + 1) * n];
                    let mut max = F::neg_infinity();
                    for j in 0..n {
                        let kj = &k[j * d + off..j * d + off + dh];
                        let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<F>() * scale;
                        row[j] = s;
                        max = max.max(s);
                    }
                    let mut sum = F::zero();
                    for r in row.iter_mut() {
                        *r = (*r - max).exp();
                        sum += *r;
                    }
                    for r in row.iter_mut() {
                        *r = *r / sum;
                    }
                    let c = &mut ctx[i * d + off..i * d + off + dh];
                    for j in 0..n {
                        let w = row[j];
                        let vj = &v[j * d + off..j * d + off + dh];
                        for (ce, &ve) in c.iter_mut().zip(vj) {
                            *ce += w * ve;
                        }
                    }
                }
                attn.push(a);
            }
            let mut o = linear(&ctx, n, d, self.get(spans.wo), self.get(spans.bo), d);
            let attn_mask = dropout_mask(n * d, p_drop, rng.as_deref_mut());
            apply_mask(&mut o, &attn_mask);
            let r1: Vec<F> = x.iter().zip(&o).map(|(&a, &b)| a + b).collect();
            let ln1 = layer_norm(&r1, n, d, self.get(spans.ln1_gain), self.get(spans.ln1_bias));

            let pre_gelu = linear(&ln1.y, n, d, self.get(spans.w1), self.get(spans.b1), ff);
            let act: Vec<F> = pre_gelu.iter().map(|&z| gelu(z)).collect();
            let mut f = linear(&act, n, ff, self.get(spans.w2), self.get(spans.b2), d);
            let ffn_mask = dropout_mask(n * d, p_drop, rng.as_deref_mut());
            apply_mask(&mut f, &ffn_mask);
            let r2: Vec<F> = ln1.y.iter().zip(&f).map(|(&a, &b)| a + b).collect();
            let ln2 = layer_norm(&r2, n, d, self.get(spans.ln2_gain), self.get(spans.ln2_bias));

            let next = ln2.y.clone();
            layers.push(LayerCache {
                input: std::mem::replace(&mut x, next),
                q,
                k,
                v,
                attn,
                ctx,
                attn_mask,
                ln1,
                pre_gelu,
                act,
                ffn_mask,
                ln2,
            });
        }

        let pooled_in = x[..d].to_vec();
        let mut pooled: Vec<F> = linear(&pooled_in, 1, d, self.get(lay.pool_w), self.get(lay.pool_b), d)
            .into_iter()
            .map(|u| u.tanh())
            .collect();
        let pool_mask = dropout_mask(d, p_drop, rng.as_deref_mut());
        let pooled_pre_drop = pooled.clone();
        apply_mask(&mut pooled, &pool_mask);
        let logits = linear(
            &pooled,
            1,
            d,
            self.get(lay.classifier_w),
            self.get(lay.classifier_b),
            cfg.n_classes,
        );
        Ok(ForwardCache {
            positions,
            ids: ids.to_vec(),
            embed_mask,
            layers,
            pooled_in,
            pooled: pooled_pre_drop,
            pool_mask,
            logits,
        })
    }

    /// Logits without dropout.
    pub fn logits(&self, ids: &[u32]) -> Result<Vec<F>> {
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(ids, None)?.logits)
    }

    /// Accumulates the gradient of a loss with logit gradient `dlogits`
    /// into `grads` (same layout as `params`).
    pub fn backward(&self, cache: &ForwardCache<F>, dlogits: &[F], grads: &mut [F]) {
        let cfg = &self.config;
        let d = cfg.d_model;
        let ff = cfg.d_ff;
        let heads = cfg.n_heads;
        let dh = d / heads;
        let n = cache.positions.len();
        let lay = &self.layout;
        let scale = cst::<F>(1.0 / (dh as f64).sqrt());
        debug_assert_eq!(grads.len(), self.params.len());

        // Classification head.
        let mut pooled = cache.pooled.clone();
        apply_mask(&mut pooled, &cache.pool_mask);
        let mut dpooled = {
            let (dw, db) = split_two(grads, lay.classifier_w.range(), lay.classifier_b.range());
            linear_backward(&pooled, 1, d, self.get(lay.classifier_w), cfg.n_classes, dlogits, dw, db)
        };
        apply_mask(&mut dpooled, &cache.pool_mask);
        let du: Vec<F> = dpooled
            .iter()
            .zip(&cache.pooled)
            .map(|(&g, &t)| g * (F::one() - t * t))
            .collect();
        let dcls = {
            let (dw, db) = split_two(grads, lay.pool_w.range(), lay.pool_b.range());
            linear_backward(&cache.pooled_in, 1, d, self.get(lay.pool_w), d, &du, dw, db)
        };
        let mut dx = vec![F::zero(); n * d];
        dx[..d].copy_from_slice(&dcls);

        for (spans, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(spans, lc, n, d, ff, heads, dh, scale, dx, grads);
        }

        apply_mask(&mut dx, &cache.embed_mask);
        let tok = lay.token_embedding.offset;
        let pos = lay.position_embedding.offset;
        for (i, &t) in cache.positions.iter().enumerate() {
            let id = cache.ids[t] as usize;
            for j in 0..d {
                let g = dx[i * d + j];
                grads[tok + id * d + j] += g;
                grads[pos + t * d + j] += g;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        spans: &LayerSpans,
        lc: &LayerCache<F>,
        n: usize,
        d: usize,
        ff: usize,
        heads: usize,
        dh: usize,
        scale: F,
        dy: Vec<F>,
        grads: &mut [F],
    ) -> Vec<F> {
        let dr2 = {
            let (dg, db) = split_two(grads, spans.ln2_gain.range(), spans.ln2_bias.range());
            layer_norm_backward(&lc.ln2, n, d, self.get(spans.ln2_gain), &dy, dg, db)
        };
        let mut df = dr2.clone();
        apply_mask(&mut df, &lc.ffn_mask);
        let dact = {
            let (dw, db) = split_two(grads, spans.w2.range(), spans.b2.range());
            linear_backward(&lc.act, n, ff, self.get(spans.w2), d, &df, dw, db)
        };
        let dz: Vec<F> = dact
            .iter()
            .zip(&lc.pre_gelu)
            .map(|(&g, &z)| g * gelu_grad(z))
            .collect();
        let mut dh1 = {
            let (dw, db) = split_two(grads, spans.w1.range(), spans.b1.range());
            linear_backward(&lc.ln1.y, n, d, self.get(spans.w1), ff, &dz, dw, db)
        };
        dh1.iter_mut().zip(&dr2).for_each(|(a, &b)| *a += b);

        let dr1 = {
            let (dg, db) = split_two(grads, spans.ln1_gain.range(), spans.ln1_bias.range());
            layer_norm_backward(&lc.ln1, n, d, self.get(spans.ln1_gain), &dh1, dg, db)
        };
        let mut dout = dr1.clone();
        apply_mask(&mut dout, &lc.attn_mask);
        let dctx = {
            let (dw, db) = split_two(grads, spans.wo.range(), spans.bo.range());
            linear_backward(&lc.ctx, n, d, self.get(spans.wo), d, &dout, dw, db)
        };

        let mut dq = vec![F::zero(); n * d];
        let mut dk = vec![F::zero(); n * d];
        let mut dv = vec![F::zero(); n * d];
        let mut da = vec![F::zero(); n];
        for h in 0..heads {
            let off = h * dh;
            let a = &lc.attn[h];
            for i in 0..n {
                let dci = &dctx[i * d + off..i * d + off + dh];
                let arow = &a[i * n..(i + 1) * n];
                let mut dot = F::zero();
                for j in 0..n {
                    let vj = &lc.v[j * d + off..j * d + off + dh];
                    da[j] = dci.iter().zip(vj).map(|(&x, &y)| x * y).sum::<F>();
                    dot += da[j] * arow[j];
                    let dvj = &mut dv[j * d + off..j * d + off + dh];
                    for (g, &c) in dvj.iter_mut().zip(dci) {
                        *g += arow[j] * c;
                    }
                }
                for j in 0..n {
                    let ds = arow[j] * (da[j] - dot) * scale;
                    if ds == F::zero() {
                        continue;
                    }
                    for e in 0..dh {
                        dq[i * d + off + e] += ds * lc.k[j * d + off + e];
                        dk[j * d + off + e] += ds * lc.q[i * d + off + e];
                    }
                }
            }
        }

        let mut dx = dr1;
        for (w, b, g) in [(spans.wq, spans.bq, &dq), (spans.wk, spans.bk, &dk), (spans.wv, spans.bv, &dv)] {
            let part = {
                let (dw, db) = split_two(grads, w.range(), b.range());
                linear_backward(&lc.input, n, d, self.get(w), d, g, dw, db)
            };
            dx.iter_mut().zip(&part).for_each(|(a, &b)| *a += b);
        }
        dx
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
fn split_two<F>(
    v: &mut [F],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [F], &mut [F]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = v.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}
