//! Fine-tuning objectives: plain MSE against a normalized human score, a
//! layer-wise distillation penalty tying a student's trace to a frozen
//! teacher's, and their weighted sum.
//!
//! The distillation penalty sums squared L2 differences over the
//! embedding-layer output, every transformer layer output, every
//! pre-softmax attention tensor and the prediction output. Each tensor's
//! contribution is divided by its unmasked element count by default so
//! sequence length does not dominate the weighting; the raw unnormalized
//! sum is available behind [`KdNorm::RawSum`]. Padded positions contribute
//! nothing either way. Gradients flow only into the student.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::ForwardTrace;
use crate::report::LossReport;

/// Weights of the combined fine-tuning loss.
#[derive(Debug, Clone, Copy)]
pub struct KdHyper {
    /// Weight on the MSE term.
    pub mse_weight: f64,
    /// Weight on the distillation term.
    pub kd_weight: f64,
}

impl KdHyper {
    pub fn new(mse_weight: f64, kd_weight: f64) -> Result<Self> {
        if mse_weight < 0.0 || kd_weight < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".to_string()));
        }
        if mse_weight == 0.0 && kd_weight == 0.0 {
            return Err(Error::InvalidConfig(
                "mse and kd weights must not both be zero".to_string(),
            ));
        }
        Ok(KdHyper {
            mse_weight,
            kd_weight,
        })
    }
}

impl Default for KdHyper {
    fn default() -> Self {
        KdHyper {
            mse_weight: 1.0,
            kd_weight: 5.0,
        }
    }
}

/// Normalization of each tensor's squared-difference contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KdNorm {
    /// Divide by the tensor's unmasked element count.
    #[default]
    PerElement,
    /// The raw squared L2 sum.
    RawSum,
}

/// A teacher trace and a student trace over the same input.
#[derive(Debug, Clone, Copy)]
pub struct TracePair<'a> {
    pub teacher: &'a ForwardTrace,
    pub student: &'a ForwardTrace,
}

/// Gradients of the distillation loss with respect to the student trace.
#[derive(Debug, Clone)]
pub struct TraceGrads {
    /// dL/dO^t for the seq-shaped outputs t = 0..=T.
    pub layer_outputs: Vec<Vec<f64>>,
    /// dL/dA^t for t = 1..=T.
    pub attention_scores: Vec<Vec<f64>>,
    /// dL/d(prediction output).
    pub prediction: f64,
}

/// Squared error between a predicted and a target score.
pub fn mse_loss(predicted: f64, target_normalized: f64) -> f64 {
    let diff = target_normalized - predicted;
    diff * diff
}

fn check_shapes(pair: &TracePair<'_>) -> Result<()> {
    let (t, s) = (pair.teacher, pair.student);
    if t.seq_len != s.seq_len
        || t.hidden_dim != s.hidden_dim
        || t.num_heads != s.num_heads
        || t.layer_outputs.len() != s.layer_outputs.len()
        || t.attention_scores.len() != s.attention_scores.len()
        || t.mask != s.mask
    {
        return Err(Error::ShapeMismatch(
            "teacher and student traces differ in shape".to_string(),
        ));
    }
    for (a, b) in t.layer_outputs.iter().zip(&s.layer_outputs) {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(
                "layer output tensors differ in size".to_string(),
            ));
        }
    }
    for (a, b) in t.attention_scores.iter().zip(&s.attention_scores) {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(
                "attention tensors differ in size".to_string(),
            ));
        }
    }
    Ok(())
}

/// Layer-wise distillation penalty between two traces.
pub fn kd_loss(pair: &TracePair<'_>, norm: KdNorm) -> Result<f64> {
    kd_loss_with_grad(pair, norm).map(|(loss, _)| loss)
}

/// Distillation penalty plus its gradient with respect to the student.
pub fn kd_loss_with_grad(pair: &TracePair<'_>, norm: KdNorm) -> Result<(f64, TraceGrads)> {
    check_shapes(pair)?;
    let t = pair.teacher;
    let s = pair.student;
    let n = t.seq_len;
    let h = t.hidden_dim;
    let heads = t.num_heads;
    let unmasked: Vec<usize> = (0..n).filter(|&i| t.mask[i] == 1).collect();

    let mut loss = 0.0;
    let seq_tensors = t.layer_outputs.len() - 1; // T + 1 seq-shaped outputs
    let mut g_outputs = Vec::with_capacity(seq_tensors);

    for idx in 0..seq_tensors {
        let weight = match norm {
            KdNorm::PerElement => 1.0 / (unmasked.len() * h) as f64,
            KdNorm::RawSum => 1.0,
        };
        let mut g = vec![0.0; n * h];
        let (tv, sv) = (&t.layer_outputs[idx], &s.layer_outputs[idx]);
        for &i in &unmasked {
            for k in 0..h {
                let diff = sv[i * h + k] - tv[i * h + k];
                loss += weight * diff * diff;
                g[i * h + k] = 2.0 * weight * diff;
            }
        }
        g_outputs.push(g);
    }

    // Prediction output: a single scalar.
    let t_pred = t.layer_outputs[seq_tensors][0];
    let s_pred = s.layer_outputs[seq_tensors][0];
    let diff = s_pred - t_pred;
    loss += diff * diff;
    let g_prediction = 2.0 * diff;

    let mut g_attention = Vec::with_capacity(t.attention_scores.len());
    for (ta, sa) in t.attention_scores.iter().zip(&s.attention_scores) {
        let weight = match norm {
            KdNorm::PerElement => 1.0 / (heads * unmasked.len() * unmasked.len()) as f64,
            KdNorm::RawSum => 1.0,
        };
        let mut g = vec![0.0; heads * n * n];
        for c in 0..heads {
            for &i in &unmasked {
                for &j in &unmasked {
                    let idx = (c * n + i) * n + j;
                    let diff = sa[idx] - ta[idx];
                    loss += weight * diff * diff;
                    g[idx] = 2.0 * weight * diff;
                }
            }
        }
        g_attention.push(g);
    }

    Ok((
        loss,
        TraceGrads {
            layer_outputs: g_outputs,
            attention_scores: g_attention,
            prediction: g_prediction,
        },
    ))
}

/// Batch-mean weighted sum of the MSE and distillation terms. The report
/// carries the raw batch means and their weighted contributions; the total
/// is the weighted sum.
pub fn kd_mse_loss(
    batch: &[(TracePair<'_>, f64)],
    hyper: &KdHyper,
    norm: KdNorm,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".to_string()));
    }
    let mut mse_sum = 0.0;
    let mut kd_sum = 0.0;
    for (pair, target) in batch {
        mse_sum += mse_loss(pair.student.score, *target);
        kd_sum += kd_loss(pair, norm)?;
    }
    let n = batch.len() as f64;
    let mse_mean = mse_sum / n;
    let kd_mean = kd_sum / n;
    let mse_weighted = hyper.mse_weight * mse_mean;
    let kd_weighted = hyper.kd_weight * kd_mean;
    Ok(LossReport::new(
        vec![
            ("mse".to_string(), mse_mean),
            ("kd".to_string(), kd_mean),
            ("mse_weighted".to_string(), mse_weighted),
            ("kd_weighted".to_string(), kd_weighted),
        ],
        mse_weighted + kd_weighted,
    ))
}
