//! The metric model: a transformer encoder over an encoded context-response
//! pair followed by a three-layer scorer producing a coherence score in
//! (0, 1).
//!
//! [`MetricModel::forward_trace`] exposes every intermediate needed for
//! layer-wise distillation: the embedding-layer output, each transformer
//! layer's output, the pre-softmax attention matrices and the prediction
//! output. Backprop is hand-written ([`MetricModel::backward`]) and accepts
//! upstream gradients at the score, the prediction output, the pooled
//! feature and any trace tensor, so ranking, regression and distillation
//! objectives all train through one entry point.

mod backward;
mod forward;
mod params;

pub use backward::OutputGrads;
pub use forward::{ForwardCache, Mode, MASK_FILL};
pub use params::{EncoderLayerParams, Gradients, LayerNormParams, Linear, Params};

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use crate::corpus::EncodedPair;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Hyperparameters of the encoder + scorer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    /// Dropout probability; active only in training mode.
    pub dropout: f64,
    /// Hidden widths of the first two scorer layers.
    pub scorer_dims: (usize, usize),
    pub seed: u64,
    /// When true, the prediction output distilled as the final layer is the
    /// post-sigmoid score instead of the pre-sigmoid logit. Distilling the
    /// logit keeps gradients alive near saturation, so `false` is the
    /// default.
    pub distill_post_sigmoid: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, hidden 64, 2 heads, small enough for
    /// finite-difference checking while keeping the full index structure.
    pub fn toy(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 128,
            max_seq_len: 64,
            dropout: 0.0,
            scorer_dims: (64, 32),
            seed,
            distill_post_sigmoid: false,
        }
    }

    /// Minimal config for gradient checks.
    pub fn tiny(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 16,
            dropout: 0.0,
            scorer_dims: (6, 4),
            seed,
            distill_post_sigmoid: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::InvalidConfig(
                "vocab_size must cover the 4 reserved tokens".to_string(),
            ));
        }
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
            ("scorer_dims.0", self.scorer_dims.0),
            ("scorer_dims.1", self.scorer_dims.1),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// Per-layer intermediates of one forward pass, in the shapes the
/// distillation objective consumes.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub seq_len: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    /// Attention mask over the traced positions (1 = real token).
    pub mask: Vec<u8>,
    /// Layer outputs `O^0 ..= O^{T+1}`: index 0 is the embedding-layer
    /// output and index T+1 the prediction-layer output (a single scalar;
    /// pre-sigmoid unless `distill_post_sigmoid` is set). The seq-shaped
    /// entries are row-major `[seq_len, hidden_dim]`.
    pub layer_outputs: Vec<Vec<f64>>,
    /// Pre-softmax attention scores `A^1 ..= A^T`, each
    /// `[num_heads, seq_len, seq_len]`; masked key positions carry the
    /// additive large-negative fill.
    pub attention_scores: Vec<Vec<f64>>,
    /// The coherence score (always post-sigmoid).
    pub score: f64,
}

/// Transformer encoder plus scorer; weights only, no training state.
#[derive(Debug, Clone)]
pub struct MetricModel {
    pub config: ModelConfig,
    pub params: Params,
}

/// Builds a model with seed-deterministic weights.
pub fn init_model(config: ModelConfig) -> Result<MetricModel> {
    config.validate()?;
    let mut rng = Rng::derived(config.seed, 0x4D0D_E1);
    let params = Params::init(&config, &mut rng);
    Ok(MetricModel { config, params })
}

impl MetricModel {
    /// Score a pair in inference mode.
    pub fn forward_score(&self, pair: &EncodedPair) -> Result<f64> {
        Ok(self.forward(pair, Mode::Inference)?.score())
    }

    /// Full trace in inference mode.
    pub fn forward_trace(&self, pair: &EncodedPair) -> Result<ForwardTrace> {
        Ok(self.forward(pair, Mode::Inference)?.into_trace(&self.config))
    }

    /// Deep copy; the clone and the original never share state.
    pub fn clone_model(&self) -> MetricModel {
        self.clone()
    }

    /// Runs only the three scorer layers on a pooled feature vector;
    /// returns `(logit, score)`.
    pub fn scorer_forward(&self, pooled: &[f64]) -> (f64, f64) {
        forward::scorer_forward(self, pooled)
    }

    pub fn fingerprint(&self) -> u64 {
        self.params.fingerprint(&self.config)
    }

    /// Rebuilds a model from named tensors (checkpoint loading). Every
    /// tensor of the layout must be present with matching shape.
    pub fn from_named_tensors(
        config: ModelConfig,
        mut lookup: impl FnMut(&str, usize, usize) -> Result<Vec<f64>>,
    ) -> Result<MetricModel> {
        config.validate()?;
        let mut params = Params::zeros(&config);
        let specs: Vec<(alloc::string::String, usize, usize)> = params
            .entries(&config)
            .into_iter()
            .map(|(name, _, r, c)| (name, r, c))
            .collect();
        for (buf, (name, rows, cols)) in params.buffers_mut().into_iter().zip(&specs) {
            let data = lookup(name, *rows, *cols)?;
            if data.len() != rows * cols {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {name}: expected {}x{}, got {} values",
                    rows,
                    cols,
                    data.len()
                )));
            }
            buf.copy_from_slice(&data);
        }
        Ok(MetricModel { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_pair, MultiLevelExample, SimpleTokenizer, Utterance, Vocabulary};
    use crate::math;

    fn utt(s: &str) -> Utterance {
        Utterance::new(s).unwrap()
    }

    pub(crate) fn fixture() -> (Vocabulary, EncodedPair) {
        let corpus = vec![MultiLevelExample::new(
            vec![utt("where is the library")],
            vec![
                vec![utt("banana banana banana")],
                vec![utt("down the street past the cafe")],
            ],
        )
        .unwrap()];
        let vocab = Vocabulary::build(&corpus, &SimpleTokenizer, 1).unwrap();
        let pair = encode_pair(
            &[utt("where is the library")],
            &utt("down the street"),
            &vocab,
            &SimpleTokenizer,
            16,
        )
        .unwrap();
        (vocab, pair)
    }

    #[test]
    fn model_and_vocab_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<MetricModel>();
        assert_send_sync::<Vocabulary>();
        assert_send_sync::<ForwardTrace>();
    }

    #[test]
    fn same_seed_same_scores() {
        let (vocab, pair) = fixture();
        let a = init_model(ModelConfig::tiny(vocab.len(), 9)).unwrap();
        let b = init_model(ModelConfig::tiny(vocab.len(), 9)).unwrap();
        assert_eq!(
            a.forward_score(&pair).unwrap(),
            b.forward_score(&pair).unwrap()
        );
        let c = init_model(ModelConfig::tiny(vocab.len(), 10)).unwrap();
        assert_ne!(
            a.forward_score(&pair).unwrap(),
            c.forward_score(&pair).unwrap()
        );
    }

    #[test]
    fn head_divisibility_enforced() {
        let mut cfg = ModelConfig::tiny(16, 0);
        cfg.hidden_dim = 6;
        cfg.num_heads = 4;
        assert!(init_model(cfg).is_err());
    }

    #[test]
    fn score_is_deterministic_and_open_interval() {
        let (vocab, pair) = fixture();
        let m = init_model(ModelConfig::tiny(vocab.len(), 3)).unwrap();
        let s1 = m.forward_score(&pair).unwrap();
        let s2 = m.forward_score(&pair).unwrap();
        assert_eq!(s1, s2);
        assert!(s1 > 0.0 && s1 < 1.0);
    }

    #[test]
    fn trace_exposes_all_layers() {
        // T = 2: layer outputs O^0..O^3 (the last a scalar) and A^1..A^2.
        let (vocab, pair) = fixture();
        let mut cfg = ModelConfig::tiny(vocab.len(), 4);
        cfg.num_layers = 2;
        let m = init_model(cfg).unwrap();
        let trace = m.forward_trace(&pair).unwrap();
        assert_eq!(trace.layer_outputs.len(), 4);
        assert_eq!(trace.attention_scores.len(), 2);
        assert_eq!(trace.layer_outputs[3].len(), 1);
        let n = trace.seq_len;
        assert_eq!(trace.layer_outputs[0].len(), n * trace.hidden_dim);
        assert_eq!(trace.attention_scores[0].len(), trace.num_heads * n * n);
        assert_eq!(trace.score, m.forward_score(&pair).unwrap());
    }

    #[test]
    fn attention_shape_matches_heads_by_seq_squared() {
        let (vocab, _) = fixture();
        let mut cfg = ModelConfig::toy(vocab.len(), 5);
        cfg.num_layers = 2;
        let m = init_model(cfg).unwrap();
        // 10 real positions, 2 heads -> each A^t is 2 x 10 x 10.
        let pair = encode_pair(
            &[utt("where is the library past")],
            &utt("the street"),
            &vocab,
            &SimpleTokenizer,
            32,
        )
        .unwrap();
        let trace = m.forward_trace(&pair).unwrap();
        assert_eq!(trace.seq_len, 10);
        assert_eq!(
            trace.attention_scores[0].len(),
            2 * trace.seq_len * trace.seq_len
        );
    }

    #[test]
    fn prediction_output_feeds_the_score() {
        let (vocab, pair) = fixture();
        let m = init_model(ModelConfig::tiny(vocab.len(), 6)).unwrap();
        let trace = m.forward_trace(&pair).unwrap();
        let logit = trace.layer_outputs.last().unwrap()[0];
        assert!((math::sigmoid(logit) - trace.score).abs() < 1e-15);
    }

    #[test]
    fn pooled_first_token_vector_feeds_the_scorer() {
        let (vocab, pair) = fixture();
        let m = init_model(ModelConfig::tiny(vocab.len(), 7)).unwrap();
        let trace = m.forward_trace(&pair).unwrap();
        let h = trace.hidden_dim;
        let final_layer = &trace.layer_outputs[trace.layer_outputs.len() - 2];
        let pooled = &final_layer[..h];
        let (logit, score) = m.scorer_forward(pooled);
        assert!((score - trace.score).abs() < 1e-15);
        assert!((logit - trace.layer_outputs.last().unwrap()[0]).abs() < 1e-15);
    }

    #[test]
    fn score_matches_hand_computed_scorer_arithmetic() {
        // Independent re-implementation of the three scorer layers on the
        // pooled feature extracted from the trace.
        let (vocab, pair) = fixture();
        let m = init_model(ModelConfig::tiny(vocab.len(), 13)).unwrap();
        let trace = m.forward_trace(&pair).unwrap();
        let h = trace.hidden_dim;
        let pooled = &trace.layer_outputs[trace.layer_outputs.len() - 2][..h];

        let matvec = |x: &[f64], lin: &Linear| -> Vec<f64> {
            (0..lin.fan_out)
                .map(|o| {
                    let mut acc = lin.b[o];
                    for (i, &xv) in x.iter().enumerate() {
                        acc += xv * lin.w[i * lin.fan_out + o];
                    }
                    acc
                })
                .collect()
        };
        let elu = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter()
                .map(|x| if x > 0.0 { x } else { math::exp(x) - 1.0 })
                .collect()
        };
        let a1 = elu(matvec(pooled, &m.params.scorer[0]));
        let a2 = elu(matvec(&a1, &m.params.scorer[1]));
        let logit = matvec(&a2, &m.params.scorer[2])[0];
        let score = 1.0 / (1.0 + math::exp(-logit));
        assert!((score - trace.score).abs() < 1e-12);
    }

    #[test]
    fn clone_is_isolated_from_original() {
        let (vocab, pair) = fixture();
        let original = init_model(ModelConfig::tiny(vocab.len(), 8)).unwrap();
        let mut clone = original.clone_model();
        assert_eq!(
            original.forward_score(&pair).unwrap(),
            clone.forward_score(&pair).unwrap()
        );
        let before = original.forward_score(&pair).unwrap();
        clone.params.scorer[2].b[0] += 5.0;
        assert_eq!(original.forward_score(&pair).unwrap(), before);
        assert_ne!(
            clone.forward_score(&pair).unwrap(),
            original.forward_score(&pair).unwrap()
        );
    }

    #[test]
    fn pad_invariance() {
        let (vocab, _) = fixture();
        let m = init_model(ModelConfig::toy(vocab.len(), 11)).unwrap();
        let short = encode_pair(
            &[utt("where is the library")],
            &utt("down the street"),
            &vocab,
            &SimpleTokenizer,
            12,
        )
        .unwrap();
        let long = encode_pair(
            &[utt("where is the library")],
            &utt("down the street"),
            &vocab,
            &SimpleTokenizer,
            64,
        )
        .unwrap();
        assert_eq!(long.length, short.length);
        let a = m.forward_score(&short).unwrap();
        let b = m.forward_score(&long).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn interior_masked_positions_carry_the_fill() {
        let (vocab, mut pair) = fixture();
        let m = init_model(ModelConfig::tiny(vocab.len(), 19)).unwrap();
        // Mask out one interior position; its column of attention scores
        // takes the additive fill while every row stays finite.
        pair.attention_mask[3] = 0;
        let trace = m.forward_trace(&pair).unwrap();
        let n = trace.seq_len;
        for a in &trace.attention_scores {
            for row in 0..trace.num_heads * n {
                for j in 0..n {
                    let v = a[row * n + j];
                    assert!(v.is_finite());
                    if j == 3 {
                        assert!(v < forward::MASK_FILL / 2.0, "masked key got {v}");
                    }
                }
            }
        }
        assert!(trace.score > 0.0 && trace.score < 1.0);
    }

    #[test]
    fn fully_masked_input_rejected() {
        let (vocab, mut pair) = fixture();
        let m = init_model(ModelConfig::tiny(vocab.len(), 20)).unwrap();
        for m in pair.attention_mask.iter_mut() {
            *m = 0;
        }
        assert!(m.forward_score(&pair).is_err());
    }

    #[test]
    fn overlong_input_rejected() {
        let (vocab, _) = fixture();
        let mut cfg = ModelConfig::tiny(vocab.len(), 1);
        cfg.max_seq_len = 8;
        let m = init_model(cfg).unwrap();
        let pair = encode_pair(
            &[utt("where is the library past the cafe down the street")],
            &utt("down the street banana banana"),
            &vocab,
            &SimpleTokenizer,
            16,
        )
        .unwrap();
        assert!(pair.length > 8);
        assert!(m.forward_score(&pair).is_err());
    }

    #[test]
    fn named_tensor_round_trip() {
        let (vocab, pair) = fixture();
        let m = init_model(ModelConfig::tiny(vocab.len(), 12)).unwrap();
        let stored: alloc::vec::Vec<(alloc::string::String, Vec<f64>)> = m
            .params
            .entries(&m.config)
            .into_iter()
            .map(|(name, data, _, _)| (name, data.clone()))
            .collect();
        let rebuilt = MetricModel::from_named_tensors(m.config.clone(), |name, _, _| {
            stored
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, d)| d.clone())
                .ok_or_else(|| Error::InvalidInput(format!("missing tensor {name}")))
        })
        .unwrap();
        assert_eq!(
            m.forward_score(&pair).unwrap(),
            rebuilt.forward_score(&pair).unwrap()
        );
        assert_eq!(m.fingerprint(), rebuilt.fingerprint());
    }
}
