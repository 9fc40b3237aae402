//! Forward pass with full intermediate caching for backprop and tracing.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::params::{LayerNormParams, Linear};
use super::{ForwardTrace, MetricModel, ModelConfig};
use crate::corpus::EncodedPair;
use crate::error::{Error, Result};
use crate::math;
use crate::rng::Rng;

/// Additive fill for masked key positions in the attention scores.
pub const MASK_FILL: f64 = -1e9;
pub(crate) const LN_EPS: f64 = 1e-12;

/// Forward-pass mode. Dropout draws from a caller-supplied seed so training
/// stays reproducible.
#[derive(Debug, Clone, Copy)]
pub enum Mode {
    Inference,
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Pre-softmax attention scores `[heads, n, n]`, mask fill included.
    pub scores: Vec<f64>,
    /// Post-softmax probabilities, before attention dropout.
    pub probs: Vec<f64>,
    pub drop_probs: Option<Vec<f64>>,
    /// Per-head weighted values, concatenated `[n, hidden]`.
    pub ctx: Vec<f64>,
    pub drop_attn: Option<Vec<f64>>,
    /// Residual input to the first layer norm.
    pub res_attn: Vec<f64>,
    pub ln_attn: LnCache,
    /// Output of the first layer norm (FFN input).
    pub mid: Vec<f64>,
    pub ffn_pre: Vec<f64>,
    pub ffn_act: Vec<f64>,
    pub drop_ffn: Option<Vec<f64>>,
    /// Residual input to the second layer norm.
    pub res_ffn: Vec<f64>,
    pub ln_ffn: LnCache,
    /// The layer output O^t.
    pub out: Vec<f64>,
}

/// Everything one forward pass computed, kept for [`MetricModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) n: usize,
    pub(crate) token_ids: Vec<u32>,
    pub(crate) segment_ids: Vec<u8>,
    pub(crate) mask: Vec<u8>,
    pub(crate) emb_sum: Vec<f64>,
    pub(crate) ln_emb: LnCache,
    pub(crate) drop_emb: Option<Vec<f64>>,
    /// Embedding-layer output O^0 (after norm and, in training, dropout).
    pub(crate) emb_out: Vec<f64>,
    pub(crate) layers: Vec<LayerCache>,
    pub(crate) pooled: Vec<f64>,
    pub(crate) s_pre1: Vec<f64>,
    pub(crate) s_act1: Vec<f64>,
    pub(crate) s_pre2: Vec<f64>,
    pub(crate) s_act2: Vec<f64>,
    pub(crate) logit: f64,
    pub(crate) score: f64,
}

impl ForwardCache {
    pub fn score(&self) -> f64 {
        self.score
    }

    pub fn logit(&self) -> f64 {
        self.logit
    }

    /// The first-token vector of the final encoder layer.
    pub fn pooled(&self) -> &[f64] {
        &self.pooled
    }

    pub fn seq_len(&self) -> usize {
        self.n
    }

    pub fn to_trace(&self, config: &ModelConfig) -> ForwardTrace {
        let mut layer_outputs = Vec::with_capacity(self.layers.len() + 2);
        layer_outputs.push(self.emb_out.clone());
        for layer in &self.layers {
            layer_outputs.push(layer.out.clone());
        }
        let prediction = if config.distill_post_sigmoid {
            self.score
        } else {
            self.logit
        };
        layer_outputs.push(vec![prediction]);
        ForwardTrace {
            seq_len: self.n,
            hidden_dim: config.hidden_dim,
            num_heads: config.num_heads,
            mask: self.mask.clone(),
            layer_outputs,
            attention_scores: self.layers.iter().map(|l| l.scores.clone()).collect(),
            score: self.score,
        }
    }

    pub fn into_trace(self, config: &ModelConfig) -> ForwardTrace {
        self.to_trace(config)
    }
}

/// `out[n, fan_out] = x[n, fan_in] * W + b`
fn linear(x: &[f64], n: usize, lin: &Linear) -> Vec<f64> {
    let (fi, fo) = (lin.fan_in, lin.fan_out);
    debug_assert_eq!(x.len(), n * fi);
    let mut out = vec![0.0; n * fo];
    for i in 0..n {
        let xrow = &x[i * fi..(i + 1) * fi];
        let orow = &mut out[i * fo..(i + 1) * fo];
        orow.copy_from_slice(&lin.b);
        for (j, &xv) in xrow.iter().enumerate() {
            let wrow = &lin.w[j * fo..(j + 1) * fo];
            for (o, &w) in orow.iter_mut().zip(wrow) {
                *o += xv * w;
            }
        }
    }
    out
}

fn layer_norm(x: &[f64], n: usize, h: usize, p: &LayerNormParams) -> (Vec<f64>, LnCache) {
    let mut out = vec![0.0; n * h];
    let mut mean = vec![0.0; n];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * h..(i + 1) * h];
        let mu = math::mean(row);
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / h as f64;
        let rs = 1.0 / math::sqrt(var + LN_EPS);
        mean[i] = mu;
        rstd[i] = rs;
        let orow = &mut out[i * h..(i + 1) * h];
        for k in 0..h {
            orow[k] = p.gamma[k] * (row[k] - mu) * rs + p.beta[k];
        }
    }
    (out, LnCache { mean, rstd })
}

/// Inverted dropout: entries are 0 or 1/(1-p).
fn dropout_mask(len: usize, p: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.next_f64() < p { 0.0 } else { keep })
        .collect()
}

fn apply_dropout(x: &mut [f64], p: f64, rng: &mut Option<Rng>) -> Option<Vec<f64>> {
    let rng = rng.as_mut()?;
    let mask = dropout_mask(x.len(), p, rng);
    for (v, m) in x.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

pub(crate) fn scorer_forward(model: &MetricModel, pooled: &[f64]) -> (f64, f64) {
    let s = &model.params.scorer;
    let pre1 = linear(pooled, 1, &s[0]);
    let act1: Vec<f64> = pre1.iter().map(|&x| math::elu(x)).collect();
    let pre2 = linear(&act1, 1, &s[1]);
    let act2: Vec<f64> = pre2.iter().map(|&x| math::elu(x)).collect();
    let logit = linear(&act2, 1, &s[2])[0];
    (logit, math::sigmoid(logit))
}

impl MetricModel {
    /// Runs the full encoder + scorer, returning every intermediate.
    ///
    /// Trailing padded positions are trimmed before computation; with the
    /// additive masking semantics they cannot influence any real position,
    /// so the score is exactly padding-invariant.
    pub fn forward(&self, pair: &EncodedPair, mode: Mode) -> Result<ForwardCache> {
        let cfg = &self.config;
        let p = &self.params;
        let total = pair.token_ids.len();
        if pair.segment_ids.len() != total || pair.attention_mask.len() != total {
            return Err(Error::ShapeMismatch(
                "token_ids, segment_ids and attention_mask must have equal length".to_string(),
            ));
        }
        let n = pair
            .attention_mask
            .iter()
            .rposition(|&m| m == 1)
            .map(|i| i + 1)
            .ok_or_else(|| Error::InvalidInput("entirely masked input".to_string()))?;
        if n > cfg.max_seq_len {
            return Err(Error::InvalidInput(format!(
                "input has {n} real positions but the model accepts at most {}; \
                 the encoder never truncates",
                cfg.max_seq_len
            )));
        }
        let token_ids = pair.token_ids[..n].to_vec();
        let segment_ids = pair.segment_ids[..n].to_vec();
        let mask = pair.attention_mask[..n].to_vec();
        for &id in &token_ids {
            if id as usize >= cfg.vocab_size {
                return Err(Error::InvalidInput(format!(
                    "token id {id} outside vocabulary of size {}",
                    cfg.vocab_size
                )));
            }
        }
        for &s in &segment_ids {
            if s > 1 {
                return Err(Error::InvalidInput(format!("segment id {s} not in {{0, 1}}")));
            }
        }

        let h = cfg.hidden_dim;
        let heads = cfg.num_heads;
        let d = cfg.head_dim();
        let inv_sqrt_d = 1.0 / math::sqrt(d as f64);
        let mut drop_rng = match mode {
            Mode::Train { dropout_seed } if cfg.dropout > 0.0 => {
                Some(Rng::derived(dropout_seed, 0xD20))
            }
            _ => None,
        };

        // Embedding: token + position + segment, then layer norm.
        let mut emb_sum = vec![0.0; n * h];
        for i in 0..n {
            let tok = &p.tok_embed[token_ids[i] as usize * h..][..h];
            let pos = &p.pos_embed[i * h..][..h];
            let seg = &p.seg_embed[segment_ids[i] as usize * h..][..h];
            let row = &mut emb_sum[i * h..(i + 1) * h];
            for k in 0..h {
                row[k] = tok[k] + pos[k] + seg[k];
            }
        }
        let (mut emb_out, ln_emb) = layer_norm(&emb_sum, n, h, &p.norm_embed);
        let drop_emb = apply_dropout(&mut emb_out, cfg.dropout, &mut drop_rng);

        let fill: Vec<f64> = mask
            .iter()
            .map(|&m| if m == 1 { 0.0 } else { MASK_FILL })
            .collect();

        let mut layers = Vec::with_capacity(cfg.num_layers);
        let mut input = emb_out.clone();
        for layer in &p.layers {
            let q = linear(&input, n, &layer.query);
            let k = linear(&input, n, &layer.key);
            let v = linear(&input, n, &layer.value);

            // Pre-softmax scores with additive mask fill.
            let mut scores = vec![0.0; heads * n * n];
            for c in 0..heads {
                let col = c * d;
                for i in 0..n {
                    let qrow = &q[i * h + col..i * h + col + d];
                    let srow = &mut scores[(c * n + i) * n..(c * n + i + 1) * n];
                    for j in 0..n {
                        let krow = &k[j * h + col..j * h + col + d];
                        srow[j] = math::dot(qrow, krow) * inv_sqrt_d + fill[j];
                    }
                }
            }

            let mut probs = vec![0.0; heads * n * n];
            for row in 0..heads * n {
                let s = &scores[row * n..(row + 1) * n];
                let p_row = &mut probs[row * n..(row + 1) * n];
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = math::exp(s[j] - max);
                    p_row[j] = e;
                    z += e;
                }
                for v in p_row.iter_mut() {
                    *v /= z;
                }
            }

            let mut probs_used = probs.clone();
            let drop_probs = apply_dropout(&mut probs_used, cfg.dropout, &mut drop_rng);

            let mut ctx = vec![0.0; n * h];
            for c in 0..heads {
                let col = c * d;
                for i in 0..n {
                    let prow = &probs_used[(c * n + i) * n..(c * n + i + 1) * n];
                    let crow = &mut ctx[i * h + col..i * h + col + d];
                    for j in 0..n {
                        let w = prow[j];
                        if w != 0.0 {
                            let vrow = &v[j * h + col..j * h + col + d];
                            for t in 0..d {
                                crow[t] += w * vrow[t];
                            }
                        }
                    }
                }
            }

            let mut attn_out = linear(&ctx, n, &layer.output);
            let drop_attn = apply_dropout(&mut attn_out, cfg.dropout, &mut drop_rng);

            let mut res_attn = input.clone();
            for (r, a) in res_attn.iter_mut().zip(&attn_out) {
                *r += a;
            }
            let (mid, ln_attn) = layer_norm(&res_attn, n, h, &layer.norm_attn);

            let ffn_pre = linear(&mid, n, &layer.ffn_expand);
            let ffn_act: Vec<f64> = ffn_pre.iter().map(|&x| math::gelu(x)).collect();
            let mut ffn_out = linear(&ffn_act, n, &layer.ffn_project);
            let drop_ffn = apply_dropout(&mut ffn_out, cfg.dropout, &mut drop_rng);

            let mut res_ffn = mid.clone();
            for (r, f) in res_ffn.iter_mut().zip(&ffn_out) {
                *r += f;
            }
            let (out, ln_ffn) = layer_norm(&res_ffn, n, h, &layer.norm_ffn);

            input = out.clone();
            layers.push(LayerCache {
                q,
                k,
                v,
                scores,
                probs,
                drop_probs,
                ctx,
                drop_attn,
                res_attn,
                ln_attn,
                mid,
                ffn_pre,
                ffn_act,
                drop_ffn,
                res_ffn,
                ln_ffn,
                out,
            });
        }

        // Scorer over the first-token ([CLS]) vector of the last layer.
        let pooled = input[..h].to_vec();
        let s = &p.scorer;
        let s_pre1 = linear(&pooled, 1, &s[0]);
        let s_act1: Vec<f64> = s_pre1.iter().map(|&x| math::elu(x)).collect();
        let s_pre2 = linear(&s_act1, 1, &s[1]);
        let s_act2: Vec<f64> = s_pre2.iter().map(|&x| math::elu(x)).collect();
        let logit = linear(&s_act2, 1, &s[2])[0];
        let score = math::sigmoid(logit);

        Ok(ForwardCache {
            n,
            token_ids,
            segment_ids,
            mask,
            emb_sum,
            ln_emb,
            drop_emb,
            emb_out,
            layers,
            pooled,
            s_pre1,
            s_act1,
            s_pre2,
            s_act2,
            logit,
            score,
        })
    }
}
