//! Hand-written backprop through the encoder and scorer.
//!
//! Upstream gradients may enter at the score, the prediction output, the
//! pooled feature, any layer output O^t and any pre-softmax attention
//! tensor A^t; all paths accumulate into one [`Gradients`] container. This
//! single entry point serves the ranking objectives (score gradients), the
//! contrastive baselines (pooled-feature gradients) and distillation
//! (trace-tensor gradients).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::forward::{ForwardCache, LnCache};
use super::params::{Gradients, LayerNormParams, Linear};
use super::MetricModel;
use crate::error::{Error, Result};
use crate::math;

/// Gradients of the training loss with respect to this forward pass's
/// outputs. Unused entry points stay at their zero defaults.
#[derive(Debug, Clone, Copy, Default)]
pub struct OutputGrads<'a> {
    /// dL/d(score).
    pub score: f64,
    /// dL/d(prediction output O^{T+1}); interpreted pre- or post-sigmoid
    /// according to `ModelConfig::distill_post_sigmoid`.
    pub prediction: f64,
    /// dL/d(pooled feature), length `hidden_dim`.
    pub pooled: Option<&'a [f64]>,
    /// dL/dO^t for t = 0..=T (seq-shaped tensors only).
    pub layer_outputs: Option<&'a [Vec<f64>]>,
    /// dL/dA^t for t = 1..=T.
    pub attention_scores: Option<&'a [Vec<f64>]>,
}

/// `gx += gy * W^T`, `gW += x^T * gy`, `gb += column sums of gy`.
fn linear_backward(
    x: &[f64],
    n: usize,
    lin: &Linear,
    gy: &[f64],
    glin: &mut Linear,
    gx: &mut [f64],
) {
    let (fi, fo) = (lin.fan_in, lin.fan_out);
    debug_assert_eq!(gy.len(), n * fo);
    debug_assert_eq!(gx.len(), n * fi);
    for i in 0..n {
        let gyrow = &gy[i * fo..(i + 1) * fo];
        let xrow = &x[i * fi..(i + 1) * fi];
        let gxrow = &mut gx[i * fi..(i + 1) * fi];
        for j in 0..fi {
            let wrow = &lin.w[j * fo..(j + 1) * fo];
            let gwrow = &mut glin.w[j * fo..(j + 1) * fo];
            let xv = xrow[j];
            let mut acc = 0.0;
            for t in 0..fo {
                acc += gyrow[t] * wrow[t];
                gwrow[t] += xv * gyrow[t];
            }
            gxrow[j] += acc;
        }
        for t in 0..fo {
            glin.b[t] += gyrow[t];
        }
    }
}

fn layer_norm_backward(
    x: &[f64],
    n: usize,
    h: usize,
    p: &LayerNormParams,
    ln: &LnCache,
    gy: &[f64],
    gp: &mut LayerNormParams,
    gx: &mut [f64],
) {
    for i in 0..n {
        let row = &x[i * h..(i + 1) * h];
        let gyrow = &gy[i * h..(i + 1) * h];
        let gxrow = &mut gx[i * h..(i + 1) * h];
        let mu = ln.mean[i];
        let rs = ln.rstd[i];
        let mut mean_a = 0.0;
        let mut mean_ax = 0.0;
        for k in 0..h {
            let xhat = (row[k] - mu) * rs;
            let a = p.gamma[k] * gyrow[k];
            mean_a += a;
            mean_ax += a * xhat;
            gp.gamma[k] += gyrow[k] * xhat;
            gp.beta[k] += gyrow[k];
        }
        mean_a /= h as f64;
        mean_ax /= h as f64;
        for k in 0..h {
            let xhat = (row[k] - mu) * rs;
            let a = p.gamma[k] * gyrow[k];
            gxrow[k] += rs * (a - mean_a - xhat * mean_ax);
        }
    }
}

fn masked_mul(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, &s) in x.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

impl MetricModel {
    /// Accumulates parameter gradients for one cached forward pass.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &OutputGrads<'_>,
        grads: &mut Gradients,
    ) -> Result<()> {
        let cfg = &self.config;
        let pr = &self.params;
        let num_layers = pr.layers.len();
        let n = cache.n;
        let h = cfg.hidden_dim;
        let heads = cfg.num_heads;
        let d = cfg.head_dim();
        let inv_sqrt_d = 1.0 / math::sqrt(d as f64);

        if let Some(gos) = upstream.layer_outputs {
            if gos.len() != num_layers + 1 {
                return Err(Error::ShapeMismatch(format!(
                    "layer_outputs gradients: expected {} tensors, got {}",
                    num_layers + 1,
                    gos.len()
                )));
            }
            for (t, g) in gos.iter().enumerate() {
                if g.len() != n * h {
                    return Err(Error::ShapeMismatch(format!(
                        "layer_outputs gradient {t}: expected {} values, got {}",
                        n * h,
                        g.len()
                    )));
                }
            }
        }
        if let Some(gas) = upstream.attention_scores {
            if gas.len() != num_layers {
                return Err(Error::ShapeMismatch(format!(
                    "attention gradients: expected {} tensors, got {}",
                    num_layers,
                    gas.len()
                )));
            }
            for (t, g) in gas.iter().enumerate() {
                if g.len() != heads * n * n {
                    return Err(Error::ShapeMismatch(format!(
                        "attention gradient {t}: expected {} values, got {}",
                        heads * n * n,
                        g.len()
                    )));
                }
            }
        }
        if let Some(gp) = upstream.pooled {
            if gp.len() != h {
                return Err(Error::ShapeMismatch(format!(
                    "pooled gradient: expected {h} values, got {}",
                    gp.len()
                )));
            }
        }

        // Scorer backward. The sigmoid derivative is taken at the cached
        // score, which already reflects the logit clamp.
        let sig_prime = cache.score * (1.0 - cache.score);
        let mut gz = upstream.score * sig_prime;
        if cfg.distill_post_sigmoid {
            gz += upstream.prediction * sig_prime;
        } else {
            gz += upstream.prediction;
        }

        let (m1, m2) = cfg.scorer_dims;
        let mut g_act2 = vec![0.0; m2];
        for t in 0..m2 {
            g_act2[t] = gz * pr.scorer[2].w[t];
            grads.scorer[2].w[t] += cache.s_act2[t] * gz;
        }
        grads.scorer[2].b[0] += gz;

        let g_pre2: Vec<f64> = g_act2
            .iter()
            .zip(&cache.s_pre2)
            .map(|(g, &x)| g * math::elu_prime(x))
            .collect();
        let mut g_act1 = vec![0.0; m1];
        linear_backward(
            &cache.s_act1,
            1,
            &pr.scorer[1],
            &g_pre2,
            &mut grads.scorer[1],
            &mut g_act1,
        );
        let g_pre1: Vec<f64> = g_act1
            .iter()
            .zip(&cache.s_pre1)
            .map(|(g, &x)| g * math::elu_prime(x))
            .collect();
        let mut g_pooled = vec![0.0; h];
        linear_backward(
            &cache.pooled,
            1,
            &pr.scorer[0],
            &g_pre1,
            &mut grads.scorer[0],
            &mut g_pooled,
        );
        if let Some(up) = upstream.pooled {
            for (g, &u) in g_pooled.iter_mut().zip(up) {
                *g += u;
            }
        }

        // Running gradient with respect to the current layer output,
        // starting at O^T.
        let mut gout = vec![0.0; n * h];
        gout[..h].copy_from_slice(&g_pooled);
        if let Some(gos) = upstream.layer_outputs {
            for (g, &u) in gout.iter_mut().zip(&gos[num_layers]) {
                *g += u;
            }
        }

        for li in (0..num_layers).rev() {
            let lc = &cache.layers[li];
            let lp = &pr.layers[li];
            let glp = &mut grads.layers[li];

            // Second layer norm (produces O^t from the FFN residual).
            let mut g_res_ffn = vec![0.0; n * h];
            layer_norm_backward(
                &lc.res_ffn,
                n,
                h,
                &lp.norm_ffn,
                &lc.ln_ffn,
                &gout,
                &mut glp.norm_ffn,
                &mut g_res_ffn,
            );

            let mut g_mid = g_res_ffn.clone();
            let mut g_ffn_out = g_res_ffn;
            masked_mul(&mut g_ffn_out, &lc.drop_ffn);

            let mut g_ffn_act = vec![0.0; n * cfg.ffn_dim];
            linear_backward(
                &lc.ffn_act,
                n,
                &lp.ffn_project,
                &g_ffn_out,
                &mut glp.ffn_project,
                &mut g_ffn_act,
            );
            let g_ffn_pre: Vec<f64> = g_ffn_act
                .iter()
                .zip(&lc.ffn_pre)
                .map(|(g, &x)| g * math::gelu_prime(x))
                .collect();
            linear_backward(
                &lc.mid,
                n,
                &lp.ffn_expand,
                &g_ffn_pre,
                &mut glp.ffn_expand,
                &mut g_mid,
            );

            // First layer norm (attention residual).
            let mut g_res_attn = vec![0.0; n * h];
            layer_norm_backward(
                &lc.res_attn,
                n,
                h,
                &lp.norm_attn,
                &lc.ln_attn,
                &g_mid,
                &mut glp.norm_attn,
                &mut g_res_attn,
            );

            let mut g_input = g_res_attn.clone();
            let mut g_attn_out = g_res_attn;
            masked_mul(&mut g_attn_out, &lc.drop_attn);

            let mut g_ctx = vec![0.0; n * h];
            linear_backward(
                &lc.ctx,
                n,
                &lp.output,
                &g_attn_out,
                &mut glp.output,
                &mut g_ctx,
            );

            // Attention backward.
            let mut g_probs = vec![0.0; heads * n * n];
            for c in 0..heads {
                let col = c * d;
                for i in 0..n {
                    let gc = &g_ctx[i * h + col..i * h + col + d];
                    let gprow = &mut g_probs[(c * n + i) * n..(c * n + i + 1) * n];
                    for j in 0..n {
                        let vrow = &lc.v[j * h + col..j * h + col + d];
                        gprow[j] = math::dot(gc, vrow);
                    }
                }
            }
            // Gradient through attention dropout (applied after softmax).
            masked_mul(&mut g_probs, &lc.drop_probs);

            let mut g_scores = vec![0.0; heads * n * n];
            for row in 0..heads * n {
                let p_row = &lc.probs[row * n..(row + 1) * n];
                let gp_row = &g_probs[row * n..(row + 1) * n];
                let dotv = math::dot(gp_row, p_row);
                let gs_row = &mut g_scores[row * n..(row + 1) * n];
                for j in 0..n {
                    gs_row[j] = p_row[j] * (gp_row[j] - dotv);
                }
            }
            if let Some(gas) = upstream.attention_scores {
                for (g, &u) in g_scores.iter_mut().zip(&gas[li]) {
                    *g += u;
                }
            }

            let mut g_q = vec![0.0; n * h];
            let mut g_k = vec![0.0; n * h];
            let mut g_v = vec![0.0; n * h];
            for c in 0..heads {
                let col = c * d;
                for i in 0..n {
                    let gs_row = &g_scores[(c * n + i) * n..(c * n + i + 1) * n];
                    let qrow = &lc.q[i * h + col..i * h + col + d];
                    let gqrow_start = i * h + col;
                    for j in 0..n {
                        let w = gs_row[j] * inv_sqrt_d;
                        if w != 0.0 {
                            let krow = &lc.k[j * h + col..j * h + col + d];
                            for t in 0..d {
                                g_q[gqrow_start + t] += w * krow[t];
                                g_k[j * h + col + t] += w * qrow[t];
                            }
                        }
                    }
                    // probs after dropout are what multiplied v.
                    let p_row = &lc.probs[(c * n + i) * n..(c * n + i + 1) * n];
                    let gc = &g_ctx[i * h + col..i * h + col + d];
                    for j in 0..n {
                        let pw = match &lc.drop_probs {
                            Some(mask) => p_row[j] * mask[(c * n + i) * n + j],
                            None => p_row[j],
                        };
                        if pw != 0.0 {
                            for t in 0..d {
                                g_v[j * h + col + t] += pw * gc[t];
                            }
                        }
                    }
                }
            }

            let input: &[f64] = if li == 0 {
                &cache.emb_out
            } else {
                &cache.layers[li - 1].out
            };
            linear_backward(input, n, &lp.query, &g_q, &mut glp.query, &mut g_input);
            linear_backward(input, n, &lp.key, &g_k, &mut glp.key, &mut g_input);
            linear_backward(input, n, &lp.value, &g_v, &mut glp.value, &mut g_input);

            gout = g_input;
            if let Some(gos) = upstream.layer_outputs {
                for (g, &u) in gout.iter_mut().zip(&gos[li]) {
                    *g += u;
                }
            }
        }

        // Embedding backward.
        masked_mul(&mut gout, &cache.drop_emb);
        let mut g_emb_sum = vec![0.0; n * h];
        layer_norm_backward(
            &cache.emb_sum,
            n,
            h,
            &pr.norm_embed,
            &cache.ln_emb,
            &gout,
            &mut grads.norm_embed,
            &mut g_emb_sum,
        );
        for i in 0..n {
            let row = &g_emb_sum[i * h..(i + 1) * h];
            let tok = &mut grads.tok_embed[cache.token_ids[i] as usize * h..][..h];
            for k in 0..h {
                tok[k] += row[k];
            }
            let pos = &mut grads.pos_embed[i * h..][..h];
            for k in 0..h {
                pos[k] += row[k];
            }
            let seg = &mut grads.seg_embed[cache.segment_ids[i] as usize * h..][..h];
            for k in 0..h {
                seg[k] += row[k];
            }
        }
        Ok(())
    }
}
