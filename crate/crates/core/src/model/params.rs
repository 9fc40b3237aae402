//! Parameter storage for the metric model.
//!
//! All tensors are flat row-major `Vec<f64>`. The same structure doubles as
//! the gradient accumulator. Tensor iteration order is fixed and is the
//! contract for flattening (optimizer state) and named export (checkpoints).

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ModelConfig;
use crate::rng::Rng;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Linear {
    /// Row-major `[fan_in, fan_out]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: vec![0.0; fan_in * fan_out],
            b: vec![0.0; fan_out],
            fan_in,
            fan_out,
        }
    }

    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let mut l = Self::zeros(fan_in, fan_out);
        for w in l.w.iter_mut() {
            *w = INIT_STD * rng.normal();
        }
        l
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNormParams {
    fn identity(dim: usize) -> Self {
        LayerNormParams {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        LayerNormParams {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm_attn: LayerNormParams,
    pub ffn_expand: Linear,
    pub ffn_project: Linear,
    pub norm_ffn: LayerNormParams,
}

#[derive(Debug, Clone)]
pub struct Params {
    /// `[vocab_size, hidden]`
    pub tok_embed: Vec<f64>,
    /// `[max_seq_len, hidden]`
    pub pos_embed: Vec<f64>,
    /// `[2, hidden]`
    pub seg_embed: Vec<f64>,
    pub norm_embed: LayerNormParams,
    pub layers: Vec<EncoderLayerParams>,
    /// Three fully-connected scorer layers (elu, elu, sigmoid).
    pub scorer: Vec<Linear>,
}

/// Gradients share the parameter layout.
pub type Gradients = Params;

impl Params {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Self {
        let h = config.hidden_dim;
        let embed = |rows: usize, rng: &mut Rng| -> Vec<f64> {
            (0..rows * h).map(|_| INIT_STD * rng.normal()).collect()
        };
        let tok_embed = embed(config.vocab_size, rng);
        let pos_embed = embed(config.max_seq_len, rng);
        let seg_embed = embed(2, rng);
        let layers = (0..config.num_layers)
            .map(|_| EncoderLayerParams {
                query: Linear::init(h, h, rng),
                key: Linear::init(h, h, rng),
                value: Linear::init(h, h, rng),
                output: Linear::init(h, h, rng),
                norm_attn: LayerNormParams::identity(h),
                ffn_expand: Linear::init(h, config.ffn_dim, rng),
                ffn_project: Linear::init(config.ffn_dim, h, rng),
                norm_ffn: LayerNormParams::identity(h),
            })
            .collect();
        let (m1, m2) = config.scorer_dims;
        let scorer = vec![
            Linear::init(h, m1, rng),
            Linear::init(m1, m2, rng),
            Linear::init(m2, 1, rng),
        ];
        Params {
            tok_embed,
            pos_embed,
            seg_embed,
            norm_embed: LayerNormParams::identity(h),
            layers,
            scorer,
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        Params {
            tok_embed: vec![0.0; config.vocab_size * h],
            pos_embed: vec![0.0; config.max_seq_len * h],
            seg_embed: vec![0.0; 2 * h],
            norm_embed: LayerNormParams::zeros(h),
            layers: (0..config.num_layers)
                .map(|_| EncoderLayerParams {
                    query: Linear::zeros(h, h),
                    key: Linear::zeros(h, h),
                    value: Linear::zeros(h, h),
                    output: Linear::zeros(h, h),
                    norm_attn: LayerNormParams::zeros(h),
                    ffn_expand: Linear::zeros(h, config.ffn_dim),
                    ffn_project: Linear::zeros(config.ffn_dim, h),
                    norm_ffn: LayerNormParams::zeros(h),
                })
                .collect(),
            scorer: vec![
                Linear::zeros(h, config.scorer_dims.0),
                Linear::zeros(config.scorer_dims.0, config.scorer_dims.1),
                Linear::zeros(config.scorer_dims.1, 1),
            ],
        }
    }

    /// Named tensors in the fixed layout order: `(name, data, rows, cols)`.
    pub fn entries(&self, config: &ModelConfig) -> Vec<(String, &Vec<f64>, usize, usize)> {
        let h = config.hidden_dim;
        let mut out: Vec<(String, &Vec<f64>, usize, usize)> = vec![
            ("encoder.embedding.token".into(), &self.tok_embed, config.vocab_size, h),
            ("encoder.embedding.position".into(), &self.pos_embed, config.max_seq_len, h),
            ("encoder.embedding.segment".into(), &self.seg_embed, 2, h),
            ("encoder.embedding.norm.gamma".into(), &self.norm_embed.gamma, 1, h),
            ("encoder.embedding.norm.beta".into(), &self.norm_embed.beta, 1, h),
        ];
        for (t, layer) in self.layers.iter().enumerate() {
            let linears = [
                ("attn.query", &layer.query),
                ("attn.key", &layer.key),
                ("attn.value", &layer.value),
                ("attn.output", &layer.output),
            ];
            for (name, l) in linears {
                out.push((format!("encoder.layer.{t}.{name}.weight"), &l.w, l.fan_in, l.fan_out));
                out.push((format!("encoder.layer.{t}.{name}.bias"), &l.b, 1, l.fan_out));
            }
            out.push((format!("encoder.layer.{t}.norm.attn.gamma"), &layer.norm_attn.gamma, 1, h));
            out.push((format!("encoder.layer.{t}.norm.attn.beta"), &layer.norm_attn.beta, 1, h));
            for (name, l) in [("ffn.expand", &layer.ffn_expand), ("ffn.project", &layer.ffn_project)] {
                out.push((format!("encoder.layer.{t}.{name}.weight"), &l.w, l.fan_in, l.fan_out));
                out.push((format!("encoder.layer.{t}.{name}.bias"), &l.b, 1, l.fan_out));
            }
            out.push((format!("encoder.layer.{t}.norm.ffn.gamma"), &layer.norm_ffn.gamma, 1, h));
            out.push((format!("encoder.layer.{t}.norm.ffn.beta"), &layer.norm_ffn.beta, 1, h));
        }
        for (k, l) in self.scorer.iter().enumerate() {
            out.push((format!("scorer.layer.{k}.weight"), &l.w, l.fan_in, l.fan_out));
            out.push((format!("scorer.layer.{k}.bias"), &l.b, 1, l.fan_out));
        }
        out
    }

    /// Mutable tensor buffers in the same order as [`Params::entries`].
    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![
            &mut self.tok_embed,
            &mut self.pos_embed,
            &mut self.seg_embed,
            &mut self.norm_embed.gamma,
            &mut self.norm_embed.beta,
        ];
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.query.w);
            out.push(&mut layer.query.b);
            out.push(&mut layer.key.w);
            out.push(&mut layer.key.b);
            out.push(&mut layer.value.w);
            out.push(&mut layer.value.b);
            out.push(&mut layer.output.w);
            out.push(&mut layer.output.b);
            out.push(&mut layer.norm_attn.gamma);
            out.push(&mut layer.norm_attn.beta);
            out.push(&mut layer.ffn_expand.w);
            out.push(&mut layer.ffn_expand.b);
            out.push(&mut layer.ffn_project.w);
            out.push(&mut layer.ffn_project.b);
            out.push(&mut layer.norm_ffn.gamma);
            out.push(&mut layer.norm_ffn.beta);
        }
        for l in self.scorer.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out
    }

    pub fn num_params(&self, config: &ModelConfig) -> usize {
        self.entries(config).iter().map(|(_, v, _, _)| v.len()).sum()
    }

    /// All parameters concatenated in layout order.
    pub fn flatten(&self, config: &ModelConfig) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params(config));
        for (_, v, _, _) in self.entries(config) {
            flat.extend_from_slice(v);
        }
        flat
    }

    /// Writes back a flat parameter vector produced by [`Params::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for buf in self.buffers_mut() {
            let len = buf.len();
            buf.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        debug_assert_eq!(off, flat.len());
    }

    pub fn fill(&mut self, value: f64) {
        for buf in self.buffers_mut() {
            for x in buf.iter_mut() {
                *x = value;
            }
        }
    }

    /// FNV-1a over the exact bit patterns; for change detection in tests
    /// and teacher-immutability checks.
    pub fn fingerprint(&self, config: &ModelConfig) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for (_, v, _, _) in self.entries(config) {
            for x in v.iter() {
                for byte in x.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x1000_0000_01b3);
                }
            }
        }
        hash
    }
}
