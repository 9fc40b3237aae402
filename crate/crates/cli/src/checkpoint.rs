//! Versioned binary checkpoint container.
//!
//! Layout: magic, format version, training-stage tag, the model config,
//! the named weight tensors (exact f64 bit patterns, so reloading
//! reproduces bit-identical inference), and optionally the optimizer state
//! needed to resume training at an epoch boundary.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use dcmetric_core::model::{MetricModel, ModelConfig};
use dcmetric_core::optim::AdamState;

use crate::error::{Result, ToolError};
use crate::pipeline::TrainState;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DCMK";
const FOOTER: &[u8; 4] = b"KMCD";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingStage {
    Pretrained,
    Finetuned,
}

impl TrainingStage {
    fn to_byte(self) -> u8 {
        match self {
            TrainingStage::Pretrained => 0,
            TrainingStage::Finetuned => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(TrainingStage::Pretrained),
            1 => Ok(TrainingStage::Finetuned),
            other => Err(ToolError::Checkpoint(format!("unknown stage tag {other}"))),
        }
    }
}

pub struct Checkpoint {
    pub model: MetricModel,
    pub stage: TrainingStage,
    pub state: Option<TrainState>,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_f64s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    write_u64(w, vs.len() as u64)?;
    for &v in vs {
        write_f64(w, v)?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| ToolError::Checkpoint("truncated checkpoint file".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_bits(u64::from_le_bytes(b)))
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let len = read_u64(r)? as usize;
    if len > (1 << 31) {
        return Err(ToolError::Checkpoint(format!("implausible tensor length {len}")));
    }
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

pub fn save_checkpoint(
    model: &MetricModel,
    stage: TrainingStage,
    state: Option<&TrainState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    w.write_all(&[stage.to_byte(), state.is_some() as u8])?;

    let cfg = &model.config;
    for v in [
        cfg.vocab_size as u64,
        cfg.hidden_dim as u64,
        cfg.num_layers as u64,
        cfg.num_heads as u64,
        cfg.ffn_dim as u64,
        cfg.max_seq_len as u64,
        cfg.scorer_dims.0 as u64,
        cfg.scorer_dims.1 as u64,
        cfg.seed,
    ] {
        write_u64(&mut w, v)?;
    }
    write_f64(&mut w, cfg.dropout)?;
    w.write_all(&[cfg.distill_post_sigmoid as u8])?;

    let entries = model.params.entries(cfg);
    write_u32(&mut w, entries.len() as u32)?;
    for (name, data, rows, cols) in entries {
        let bytes = name.as_bytes();
        write_u32(&mut w, bytes.len() as u32)?;
        w.write_all(bytes)?;
        write_u64(&mut w, rows as u64)?;
        write_u64(&mut w, cols as u64)?;
        for &v in data {
            write_f64(&mut w, v)?;
        }
    }

    if let Some(state) = state {
        write_u64(&mut w, state.next_epoch as u64)?;
        write_u64(&mut w, state.adam.step)?;
        write_f64s(&mut w, &state.adam.m)?;
        write_f64s(&mut w, &state.adam.v)?;
    }
    w.write_all(FOOTER)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(ToolError::Checkpoint("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ToolError::CheckpointVersion {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let stage = TrainingStage::from_byte(read_u8(&mut r)?)?;
    let has_state = read_u8(&mut r)? != 0;

    let vocab_size = read_u64(&mut r)? as usize;
    let hidden_dim = read_u64(&mut r)? as usize;
    let num_layers = read_u64(&mut r)? as usize;
    let num_heads = read_u64(&mut r)? as usize;
    let ffn_dim = read_u64(&mut r)? as usize;
    let max_seq_len = read_u64(&mut r)? as usize;
    let scorer_a = read_u64(&mut r)? as usize;
    let scorer_b = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let dropout = read_f64(&mut r)?;
    let distill_post_sigmoid = read_u8(&mut r)? != 0;
    let config = ModelConfig {
        vocab_size,
        hidden_dim,
        num_layers,
        num_heads,
        ffn_dim,
        max_seq_len,
        dropout,
        scorer_dims: (scorer_a, scorer_b),
        seed,
        distill_post_sigmoid,
    };

    let tensor_count = read_u32(&mut r)? as usize;
    let mut tensors: Vec<(String, Vec<f64>)> = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(ToolError::Checkpoint("implausible tensor name".into()));
        }
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ToolError::Checkpoint("tensor name is not utf-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if rows.saturating_mul(cols) > (1 << 31) {
            return Err(ToolError::Checkpoint("implausible tensor shape".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f64(&mut r)?);
        }
        tensors.push((name, data));
    }

    let model = MetricModel::from_named_tensors(config, |name, _, _| {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.clone())
            .ok_or_else(|| {
                dcmetric_core::Error::InvalidInput(format!("missing tensor {name}"))
            })
    })
    .map_err(|e| ToolError::Checkpoint(e.to_string()))?;

    let state = if has_state {
        let next_epoch = read_u64(&mut r)? as usize;
        let step = read_u64(&mut r)?;
        let m = read_f64s(&mut r)?;
        let v = read_f64s(&mut r)?;
        if m.len() != v.len() {
            return Err(ToolError::Checkpoint("optimizer moment size mismatch".into()));
        }
        Some(TrainState {
            next_epoch,
            adam: AdamState { step, m, v },
        })
    } else {
        None
    };

    let mut footer = [0u8; 4];
    read_exact(&mut r, &mut footer)?;
    if &footer != FOOTER {
        return Err(ToolError::Checkpoint("bad checkpoint footer".into()));
    }
    Ok(Checkpoint {
        model,
        stage,
        state,
    })
}

/// Rejects a checkpoint whose embedding table does not match the provided
/// vocabulary.
pub fn ensure_vocab_compat(
    model: &MetricModel,
    vocab: &dcmetric_core::corpus::Vocabulary,
) -> Result<()> {
    if model.config.vocab_size != vocab.len() {
        return Err(ToolError::Checkpoint(format!(
            "checkpoint was trained with vocab_size {} but the provided vocabulary has {} tokens",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(())
}
