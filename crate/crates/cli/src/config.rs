//! Flat key-value training configuration.
//!
//! A config file holds `key = value` lines (`#` comments allowed); every
//! key can also be overridden from the command line, which wins over the
//! file. Defaults are sized for the desk-scale model; all of them are
//! plain keys so full-scale values drop in unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dcmetric_core::distill::{KdHyper, KdNorm};
use dcmetric_core::mlr::{MlrFlags, MlrHyper};
use dcmetric_core::model::ModelConfig;

use crate::error::{Result, ToolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

/// Pre-training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainObjective {
    Mlr,
    Bce,
    Ranking,
    SupCon,
    Fat,
    VanillaMlr,
}

impl PretrainObjective {
    pub fn name(self) -> &'static str {
        match self {
            PretrainObjective::Mlr => "mlr",
            PretrainObjective::Bce => "bce",
            PretrainObjective::Ranking => "ranking",
            PretrainObjective::SupCon => "supcon",
            PretrainObjective::Fat => "fat",
            PretrainObjective::VanillaMlr => "vanilla_mlr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mlr" => PretrainObjective::Mlr,
            "bce" => PretrainObjective::Bce,
            "ranking" => PretrainObjective::Ranking,
            "supcon" => PretrainObjective::SupCon,
            "fat" => PretrainObjective::Fat,
            "vanilla_mlr" => PretrainObjective::VanillaMlr,
            other => {
                return Err(ToolError::Config(format!(
                    "unknown pretrain_objective {other:?} \
                     (expected mlr|bce|ranking|supcon|fat|vanilla_mlr)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,

    pub pretrain_objective: PretrainObjective,
    pub separation_margin: f64,
    pub compactness_tolerance: f64,
    pub ranking_margin: f64,
    pub supcon_temperature: f64,
    pub fat_margin: f64,
    pub vanilla_margin: f64,

    pub mse_weight: f64,
    pub kd_weight: f64,
    pub kd_norm: KdNorm,

    pub disable_sep: bool,
    pub disable_com: bool,
    pub disable_ord: bool,
    pub fix_encoder: bool,
    pub disable_kd: bool,

    pub finetune_data_fraction: f64,
    pub val_fraction: f64,
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    /// Halt after this many epochs while keeping the schedule of the full
    /// `epochs` plan, producing a resumable checkpoint state. 0 disables.
    pub stop_after_epochs: usize,

    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub scorer_dim1: usize,
    pub scorer_dim2: usize,
    pub distill_post_sigmoid: bool,

    pub min_freq: usize,
    pub score_min: f64,
    pub score_max: f64,
}

impl TrainConfig {
    /// Desk-scale pre-training defaults (the learning rate is sized for
    /// the small randomly initialized encoder, not a pretrained one).
    pub fn pretrain_default() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            epochs: 5,
            batch_size: 3,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            pretrain_objective: PretrainObjective::Mlr,
            separation_margin: 0.3,
            compactness_tolerance: 0.1,
            ranking_margin: 0.3,
            supcon_temperature: 0.07,
            fat_margin: 0.5,
            vanilla_margin: 0.3,
            mse_weight: 1.0,
            kd_weight: 5.0,
            kd_norm: KdNorm::PerElement,
            disable_sep: false,
            disable_com: false,
            disable_ord: false,
            fix_encoder: false,
            disable_kd: false,
            finetune_data_fraction: 1.0,
            val_fraction: 0.1,
            warmup_fraction: 0.1,
            clip_norm: 1.0,
            stop_after_epochs: 0,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 128,
            max_seq_len: 64,
            dropout: 0.0,
            scorer_dim1: 64,
            scorer_dim2: 32,
            distill_post_sigmoid: false,
            min_freq: 1,
            score_min: 1.0,
            score_max: 5.0,
        }
    }

    /// Desk-scale fine-tuning defaults.
    pub fn finetune_default() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            epochs: 20,
            batch_size: 10,
            learning_rate: 1e-3,
            ..Self::pretrain_default()
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            dropout: self.dropout,
            scorer_dims: (self.scorer_dim1, self.scorer_dim2),
            seed: self.seed,
            distill_post_sigmoid: self.distill_post_sigmoid,
        }
    }

    pub fn mlr_hyper(&self) -> Result<MlrHyper> {
        Ok(MlrHyper::new(
            self.separation_margin,
            self.compactness_tolerance,
        )?)
    }

    pub fn mlr_flags(&self) -> MlrFlags {
        MlrFlags {
            separation: !self.disable_sep,
            compactness: !self.disable_com,
            ordering: !self.disable_ord,
        }
    }

    pub fn kd_hyper(&self) -> Result<KdHyper> {
        let kd_weight = if self.disable_kd { 0.0 } else { self.kd_weight };
        Ok(KdHyper::new(self.mse_weight, kd_weight)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(ToolError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ToolError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ToolError::Config("learning_rate must be > 0".into()));
        }
        if !(0.0 < self.finetune_data_fraction && self.finetune_data_fraction <= 1.0) {
            return Err(ToolError::Config(
                "finetune_data_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(ToolError::Config("val_fraction must lie in [0, 1)".into()));
        }
        if !(self.score_min < self.score_max) {
            return Err(ToolError::Config("score_min must be below score_max".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                ToolError::Config(format!("cannot parse {value:?} for key {key}"))
            })
        }
        match key {
            "stage" => {
                self.stage = match value {
                    "pretrain" => Stage::Pretrain,
                    "finetune" => Stage::Finetune,
                    other => {
                        return Err(ToolError::Config(format!("unknown stage {other:?}")))
                    }
                }
            }
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "pretrain_objective" => {
                self.pretrain_objective = PretrainObjective::parse(value)?
            }
            "separation_margin" => self.separation_margin = parse(key, value)?,
            "compactness_tolerance" => self.compactness_tolerance = parse(key, value)?,
            "ranking_margin" => self.ranking_margin = parse(key, value)?,
            "supcon_temperature" => self.supcon_temperature = parse(key, value)?,
            "fat_margin" => self.fat_margin = parse(key, value)?,
            "vanilla_margin" => self.vanilla_margin = parse(key, value)?,
            "mse_weight" => self.mse_weight = parse(key, value)?,
            "kd_weight" => self.kd_weight = parse(key, value)?,
            "kd_norm" => {
                self.kd_norm = match value {
                    "per_element" => KdNorm::PerElement,
                    "raw_sum" => KdNorm::RawSum,
                    other => {
                        return Err(ToolError::Config(format!("unknown kd_norm {other:?}")))
                    }
                }
            }
            "disable_sep" => self.disable_sep = parse(key, value)?,
            "disable_com" => self.disable_com = parse(key, value)?,
            "disable_ord" => self.disable_ord = parse(key, value)?,
            "fix_encoder" => self.fix_encoder = parse(key, value)?,
            "disable_kd" => self.disable_kd = parse(key, value)?,
            "finetune_data_fraction" => self.finetune_data_fraction = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "stop_after_epochs" => self.stop_after_epochs = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "num_layers" => self.num_layers = parse(key, value)?,
            "num_heads" => self.num_heads = parse(key, value)?,
            "ffn_dim" => self.ffn_dim = parse(key, value)?,
            "max_seq_len" => self.max_seq_len = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "scorer_dim1" => self.scorer_dim1 = parse(key, value)?,
            "scorer_dim2" => self.scorer_dim2 = parse(key, value)?,
            "distill_post_sigmoid" => self.distill_post_sigmoid = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "score_min" => self.score_min = parse(key, value)?,
            "score_max" => self.score_max = parse(key, value)?,
            other => {
                return Err(ToolError::Config(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    /// Loads `key = value` lines from a file on top of `self`.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let text = fs::read_to_string(path.as_ref())?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ToolError::Config(format!(
                    "{}:{}: expected key = value",
                    path.as_ref().display(),
                    idx + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Canonical dump in key order; basis for the config hash.
    pub fn canonical(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("stage", self.stage.name().to_string());
        map.insert("epochs", self.epochs.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("learning_rate", format!("{}", self.learning_rate));
        map.insert("beta1", format!("{}", self.beta1));
        map.insert("beta2", format!("{}", self.beta2));
        map.insert("seed", self.seed.to_string());
        map.insert("pretrain_objective", self.pretrain_objective.name().to_string());
        map.insert("separation_margin", format!("{}", self.separation_margin));
        map.insert(
            "compactness_tolerance",
            format!("{}", self.compactness_tolerance),
        );
        map.insert("ranking_margin", format!("{}", self.ranking_margin));
        map.insert("supcon_temperature", format!("{}", self.supcon_temperature));
        map.insert("fat_margin", format!("{}", self.fat_margin));
        map.insert("vanilla_margin", format!("{}", self.vanilla_margin));
        map.insert("mse_weight", format!("{}", self.mse_weight));
        map.insert("kd_weight", format!("{}", self.kd_weight));
        map.insert(
            "kd_norm",
            match self.kd_norm {
                KdNorm::PerElement => "per_element".to_string(),
                KdNorm::RawSum => "raw_sum".to_string(),
            },
        );
        map.insert("disable_sep", self.disable_sep.to_string());
        map.insert("disable_com", self.disable_com.to_string());
        map.insert("disable_ord", self.disable_ord.to_string());
        map.insert("fix_encoder", self.fix_encoder.to_string());
        map.insert("disable_kd", self.disable_kd.to_string());
        map.insert(
            "finetune_data_fraction",
            format!("{}", self.finetune_data_fraction),
        );
        map.insert("val_fraction", format!("{}", self.val_fraction));
        map.insert("warmup_fraction", format!("{}", self.warmup_fraction));
        map.insert("clip_norm", format!("{}", self.clip_norm));
        map.insert("stop_after_epochs", self.stop_after_epochs.to_string());
        map.insert("hidden_dim", self.hidden_dim.to_string());
        map.insert("num_layers", self.num_layers.to_string());
        map.insert("num_heads", self.num_heads.to_string());
        map.insert("ffn_dim", self.ffn_dim.to_string());
        map.insert("max_seq_len", self.max_seq_len.to_string());
        map.insert("dropout", format!("{}", self.dropout));
        map.insert("scorer_dim1", self.scorer_dim1.to_string());
        map.insert("scorer_dim2", self.scorer_dim2.to_string());
        map.insert("distill_post_sigmoid", self.distill_post_sigmoid.to_string());
        map.insert("min_freq", self.min_freq.to_string());
        map.insert("score_min", format!("{}", self.score_min));
        map.insert("score_max", format!("{}", self.score_max));
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// FNV-1a of the canonical dump.
    pub fn hash(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for byte in self.canonical().bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        }
        hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn file_then_cli_overrides() {
        let path = std::env::temp_dir().join(format!("dcmetric-cfg-{}", std::process::id()));
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "# toy settings").unwrap();
        writeln!(f, "epochs = 3").unwrap();
        writeln!(f, "learning_rate = 0.01  # inline comment").unwrap();
        drop(f);
        let mut cfg = TrainConfig::pretrain_default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.learning_rate, 0.01);
        cfg.apply("epochs", "7").unwrap();
        assert_eq!(cfg.epochs, 7);
        fs::remove_file(path).ok();
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut cfg = TrainConfig::pretrain_default();
        assert!(cfg.apply("no_such_key", "1").is_err());
        assert!(cfg.apply("epochs", "banana").is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = TrainConfig::pretrain_default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        cfg = TrainConfig::finetune_default();
        cfg.finetune_data_fraction = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::pretrain_default();
        let mut b = TrainConfig::pretrain_default();
        assert_eq!(a.hash(), b.hash());
        b.apply("seed", "99").unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
