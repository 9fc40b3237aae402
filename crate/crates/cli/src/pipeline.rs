//! The two training stages and the data-fraction sweep.
//!
//! Pre-training scores every level's responses against the context
//! (L x K forward passes per example), forms score grids, applies the
//! selected ranking objective and takes one adaptive-moment step per
//! batch. Fine-tuning clones the pretrained teacher into a student and
//! minimizes the weighted MSE + distillation loss; the teacher is never
//! modified. All shuffling, splits, subsampling and dropout derive from
//! the config seed, so single-threaded runs are bit-reproducible and
//! epoch-boundary resume matches an uninterrupted run exactly.

use std::time::Instant;

use dcmetric_core::baselines::{
    bce_loss_with_grad, fat_loss_with_grad, margin_ranking_loss_with_grad,
    supcon_loss_with_grad, vanilla_mlr_loss_with_grad, FeatureGrid, TwoLevelView, ViewGrads,
};
use dcmetric_core::corpus::{
    encode_pair, EncodedPair, MultiLevelExample, ScoredPair, SimpleTokenizer, Vocabulary,
};
use dcmetric_core::distill::{kd_loss_with_grad, TracePair};
use dcmetric_core::mlr::{mlr_loss_with_grad, ScoreGrid};
use dcmetric_core::model::{
    ForwardCache, ForwardTrace, MetricModel, Mode, OutputGrads, Params,
};
use dcmetric_core::optim::{clip_global_norm, warmup_scale, AdamState};
use dcmetric_core::report::LossReport;
use dcmetric_core::rng::Rng;
use dcmetric_core::stats::CorrelationReport;

use crate::config::{PretrainObjective, Stage, TrainConfig};
use crate::error::{Result, ToolError};

const ADAM_EPS: f64 = 1e-8;
const STREAM_SPLIT: u64 = 0x5711;
const STREAM_EPOCH: u64 = 0xE70C_0000;
const STREAM_SUBSAMPLE: u64 = 0x50B5;

/// Optimizer position for epoch-boundary resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub next_epoch: usize,
    pub adam: AdamState,
}

/// One train-log line: a step report or an epoch summary.
#[derive(Debug, Clone)]
pub enum LogLine {
    Step {
        step: u64,
        components: Vec<(String, f64)>,
        total: f64,
    },
    Epoch {
        epoch: usize,
        train_total: f64,
        val_total: f64,
        wall_ms: u128,
    },
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub lines: Vec<LogLine>,
    pub config_hash: u64,
    pub wall_ms: u128,
}

impl TrainLog {
    /// One JSON object per line; a header line carries the config hash.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "config_hash": format!("{:016x}", self.config_hash),
                "wall_ms": self.wall_ms as u64,
            })
        ));
        for line in &self.lines {
            let value = match line {
                LogLine::Step {
                    step,
                    components,
                    total,
                } => {
                    let mut map = serde_json::Map::new();
                    for (k, v) in components {
                        map.insert(k.clone(), serde_json::json!(v));
                    }
                    serde_json::json!({"step": step, "components": map, "total": total})
                }
                LogLine::Epoch {
                    epoch,
                    train_total,
                    val_total,
                    wall_ms,
                } => serde_json::json!({
                    "epoch": epoch,
                    "train_total": train_total,
                    "val_total": val_total,
                    "wall_ms": *wall_ms as u64,
                }),
            };
            out.push_str(&value.to_string());
            out.push('\n');
        }
        out
    }
}

/// Models and log produced by one training run. `best` is the model of the
/// epoch with the lowest validation loss, `last` the final-epoch model.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: MetricModel,
    pub last: MetricModel,
    pub best_epoch: usize,
    pub log: TrainLog,
    pub state: TrainState,
}

fn dropout_seed(seed: u64, epoch: usize, step: usize, item: usize) -> u64 {
    let mut x = seed ^ 0xD50F_0000;
    for v in [epoch as u64, step as u64, item as u64] {
        x = (x ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        x ^= x >> 29;
    }
    x
}

/// Deterministic fraction subsample: a seeded permutation's prefix of
/// `max(1, floor(fraction * n))` indices, in ascending order.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let keep = ((fraction * n as f64).floor() as usize).clamp(1, n);
    let mut perm = Rng::derived(seed, STREAM_SUBSAMPLE).permutation(n);
    perm.truncate(keep);
    perm.sort_unstable();
    perm
}

fn split_train_val(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut perm = Rng::derived(seed, STREAM_SPLIT).permutation(n);
    let val_count = (val_fraction * n as f64).floor() as usize;
    let val: Vec<usize> = perm.drain(..val_count.min(n.saturating_sub(1))).collect();
    (perm, val)
}

/// All of one example's responses encoded against its context.
struct EncodedExample {
    levels: Vec<Vec<EncodedPair>>,
}

fn encode_examples(
    corpus: &[MultiLevelExample],
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<Vec<EncodedExample>> {
    corpus
        .iter()
        .map(|ex| {
            let levels = ex
                .levels
                .iter()
                .map(|level| {
                    level
                        .iter()
                        .map(|resp| {
                            encode_pair(&ex.context, resp, vocab, &SimpleTokenizer, max_seq_len)
                        })
                        .collect::<dcmetric_core::Result<Vec<_>>>()
                })
                .collect::<dcmetric_core::Result<Vec<_>>>()?;
            Ok(EncodedExample { levels })
        })
        .collect()
}

/// Per-pair upstream gradients for one pre-training batch.
enum PretrainGrads {
    /// dL/d(score) per example/level/slot.
    Scores(Vec<Vec<Vec<f64>>>),
    /// dL/d(pooled feature) per example/level/slot.
    Pooled(Vec<Vec<Vec<Vec<f64>>>>),
}

fn scatter_view_grads(levels: &[Vec<f64>], vg: &ViewGrads, scale: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = levels.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut neg_idx = 0;
    let last = levels.len() - 1;
    for (j, level) in levels.iter().enumerate().take(last) {
        for k in 0..level.len() {
            out[j][k] = vg.negatives[neg_idx] * scale;
            neg_idx += 1;
        }
    }
    for k in 0..levels[last].len() {
        out[last][k] = vg.positives[k] * scale;
    }
    out
}

/// Loss and upstream gradients for one batch of cached forward passes.
fn pretrain_batch_loss(
    cfg: &TrainConfig,
    caches: &[Vec<Vec<ForwardCache>>],
) -> Result<(LossReport, PretrainGrads)> {
    let grids: Vec<ScoreGrid> = caches
        .iter()
        .map(|ex| {
            ScoreGrid::new(
                ex.iter()
                    .map(|level| level.iter().map(|c| c.score()).collect())
                    .collect(),
            )
        })
        .collect();
    let batch_scale = 1.0 / caches.len() as f64;

    match cfg.pretrain_objective {
        PretrainObjective::Mlr => {
            let (report, grads) =
                mlr_loss_with_grad(&grids, &cfg.mlr_hyper()?, &cfg.mlr_flags())?;
            Ok((report, PretrainGrads::Scores(grads)))
        }
        PretrainObjective::Bce => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(grids.len());
            for grid in &grids {
                let view = TwoLevelView::from_grid(grid);
                let (loss, vg) = bce_loss_with_grad(&view);
                total += loss * batch_scale;
                grads.push(scatter_view_grads(&grid.levels, &vg, batch_scale));
            }
            Ok((
                LossReport::new(vec![("bce".into(), total)], total),
                PretrainGrads::Scores(grads),
            ))
        }
        PretrainObjective::Ranking => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(grids.len());
            for grid in &grids {
                let view = TwoLevelView::from_grid(grid);
                let (loss, vg) = margin_ranking_loss_with_grad(&view, cfg.ranking_margin)?;
                total += loss * batch_scale;
                grads.push(scatter_view_grads(&grid.levels, &vg, batch_scale));
            }
            Ok((
                LossReport::new(vec![("ranking".into(), total)], total),
                PretrainGrads::Scores(grads),
            ))
        }
        PretrainObjective::VanillaMlr => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(grids.len());
            for grid in &grids {
                let (loss, gg) = vanilla_mlr_loss_with_grad(grid, cfg.vanilla_margin)?;
                total += loss * batch_scale;
                grads.push(
                    gg.into_iter()
                        .map(|level| level.into_iter().map(|g| g * batch_scale).collect())
                        .collect(),
                );
            }
            Ok((
                LossReport::new(vec![("vanilla_mlr".into(), total)], total),
                PretrainGrads::Scores(grads),
            ))
        }
        PretrainObjective::SupCon | PretrainObjective::Fat => {
            let mut total = 0.0;
            let mut grads = Vec::with_capacity(caches.len());
            for ex in caches {
                let features = FeatureGrid::new(
                    ex.iter()
                        .map(|level| level.iter().map(|c| c.pooled().to_vec()).collect())
                        .collect(),
                );
                let (loss, fg) = match cfg.pretrain_objective {
                    PretrainObjective::SupCon => {
                        supcon_loss_with_grad(&features, cfg.supcon_temperature)?
                    }
                    _ => fat_loss_with_grad(&features, cfg.fat_margin)?,
                };
                total += loss * batch_scale;
                grads.push(
                    fg.into_iter()
                        .map(|level| {
                            level
                                .into_iter()
                                .map(|g| g.into_iter().map(|v| v * batch_scale).collect())
                                .collect()
                        })
                        .collect(),
                );
            }
            let name = cfg.pretrain_objective.name().to_string();
            Ok((
                LossReport::new(vec![(name, total)], total),
                PretrainGrads::Pooled(grads),
            ))
        }
    }
}

fn forward_example(
    model: &MetricModel,
    ex: &EncodedExample,
    mode_for: impl Fn(usize) -> Mode,
) -> Result<Vec<Vec<ForwardCache>>> {
    let mut item = 0;
    ex.levels
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|pair| {
                    let cache = model.forward(pair, mode_for(item))?;
                    item += 1;
                    Ok(cache)
                })
                .collect::<dcmetric_core::Result<Vec<_>>>()
        })
        .collect::<dcmetric_core::Result<Vec<_>>>()
        .map_err(ToolError::from)
}

/// Mean pre-training loss over a set of examples, inference mode.
fn pretrain_eval_loss(
    model: &MetricModel,
    cfg: &TrainConfig,
    examples: &[&EncodedExample],
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut caches = Vec::with_capacity(examples.len());
    for ex in examples {
        caches.push(forward_example(model, ex, |_| Mode::Inference)?);
    }
    Ok(pretrain_batch_loss(cfg, &caches)?.0.total)
}

/// Runs MLR (or baseline-objective) pre-training from scratch.
pub fn pretrain(
    model: MetricModel,
    corpus: &[MultiLevelExample],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run_pretrain(model, corpus, vocab, cfg, None)
}

/// Resumes pre-training from a saved optimizer state at an epoch boundary;
/// the combined run is bit-identical to an uninterrupted one.
pub fn pretrain_resume(
    model: MetricModel,
    corpus: &[MultiLevelExample],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    state: TrainState,
) -> Result<TrainOutcome> {
    run_pretrain(model, corpus, vocab, cfg, Some(state))
}

fn run_pretrain(
    mut model: MetricModel,
    corpus: &[MultiLevelExample],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Pretrain {
        return Err(ToolError::Config("config stage must be pretrain".into()));
    }
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(ToolError::Other("empty pre-training corpus".into()));
    }
    if !cfg.mlr_hyper()?.is_recommended() {
        eprintln!(
            "warning: separation_margin <= compactness_tolerance; \
             levels may not separate cleanly"
        );
    }
    let started = Instant::now();
    let examples = encode_examples(corpus, vocab, cfg.max_seq_len)?;
    let (train_idx, val_idx) = split_train_val(examples.len(), cfg.val_fraction, cfg.seed);
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;

    let num_params = model.params.num_params(&model.config);
    let (start_epoch, mut adam) = match state {
        Some(s) => {
            if s.adam.m.len() != num_params {
                return Err(ToolError::Checkpoint(
                    "optimizer state does not match the model size".into(),
                ));
            }
            (s.next_epoch, s.adam)
        }
        None => (0, AdamState::new(num_params)),
    };
    let end_epoch = if cfg.stop_after_epochs > 0 {
        cfg.stop_after_epochs.min(cfg.epochs)
    } else {
        cfg.epochs
    };
    if start_epoch >= end_epoch {
        return Err(ToolError::Config(format!(
            "resume epoch {start_epoch} is not below the end epoch {end_epoch}"
        )));
    }

    let mut lines = Vec::new();
    let mut best: Option<(f64, usize, MetricModel)> = None;
    let mut global_step = (start_epoch * steps_per_epoch) as u64;

    for epoch in start_epoch..end_epoch {
        let epoch_started = Instant::now();
        let mut order = train_idx.clone();
        Rng::derived(cfg.seed, STREAM_EPOCH + epoch as u64).shuffle(&mut order);
        let mut epoch_loss_sum = 0.0;
        let mut epoch_batches = 0usize;

        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut caches = Vec::with_capacity(batch.len());
            for (bi, &ex_idx) in batch.iter().enumerate() {
                let seed = dropout_seed(cfg.seed, epoch, step, bi);
                caches.push(forward_example(&model, &examples[ex_idx], |item| {
                    Mode::Train {
                        dropout_seed: seed.wrapping_add(item as u64),
                    }
                })?);
            }
            let (report, grads_up) = pretrain_batch_loss(cfg, &caches)?;
            if !report.total.is_finite() {
                return Err(ToolError::Diverged { step: global_step });
            }

            let mut grads = Params::zeros(&model.config);
            match &grads_up {
                PretrainGrads::Scores(gs) => {
                    for (ex_caches, ex_grads) in caches.iter().zip(gs) {
                        for (level_caches, level_grads) in ex_caches.iter().zip(ex_grads) {
                            for (cache, &g) in level_caches.iter().zip(level_grads) {
                                if g != 0.0 {
                                    let upstream = OutputGrads {
                                        score: g,
                                        ..Default::default()
                                    };
                                    model.backward(cache, &upstream, &mut grads)?;
                                }
                            }
                        }
                    }
                }
                PretrainGrads::Pooled(gs) => {
                    for (ex_caches, ex_grads) in caches.iter().zip(gs) {
                        for (level_caches, level_grads) in ex_caches.iter().zip(ex_grads) {
                            for (cache, g) in level_caches.iter().zip(level_grads) {
                                let upstream = OutputGrads {
                                    pooled: Some(g),
                                    ..Default::default()
                                };
                                model.backward(cache, &upstream, &mut grads)?;
                            }
                        }
                    }
                }
            }

            let mut flat_grads = grads.flatten(&model.config);
            clip_global_norm(&mut flat_grads, cfg.clip_norm);
            let lr = cfg.learning_rate
                * warmup_scale(global_step, total_steps, cfg.warmup_fraction);
            let mut flat_params = model.params.flatten(&model.config);
            adam.step(&mut flat_params, &flat_grads, lr, cfg.beta1, cfg.beta2, ADAM_EPS)?;
            model.params.assign_flat(&flat_params);

            epoch_loss_sum += report.total;
            epoch_batches += 1;
            lines.push(LogLine::Step {
                step: global_step,
                components: report.components.clone(),
                total: report.total,
            });
            global_step += 1;
        }

        let train_total = epoch_loss_sum / epoch_batches.max(1) as f64;
        let val_refs: Vec<&EncodedExample> = val_idx.iter().map(|&i| &examples[i]).collect();
        let val_total = if val_refs.is_empty() {
            train_total
        } else {
            pretrain_eval_loss(&model, cfg, &val_refs)?
        };
        lines.push(LogLine::Epoch {
            epoch,
            train_total,
            val_total,
            wall_ms: epoch_started.elapsed().as_millis(),
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_total < *b) {
            best = Some((val_total, epoch, model.clone()));
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_model,
        last: model,
        best_epoch,
        log: TrainLog {
            lines,
            config_hash: cfg.hash(),
            wall_ms: started.elapsed().as_millis(),
        },
        state: TrainState {
            next_epoch: end_epoch,
            adam,
        },
    })
}

/// Encodes scored pairs once, in corpus order.
fn encode_scored_pairs(
    pairs: &[ScoredPair],
    vocab: &Vocabulary,
    max_seq_len: usize,
) -> Result<Vec<EncodedPair>> {
    pairs
        .iter()
        .map(|p| {
            encode_pair(&p.context, &p.response, vocab, &SimpleTokenizer, max_seq_len)
                .map_err(ToolError::from)
        })
        .collect()
}

fn finetune_eval_loss(
    student: &MetricModel,
    cfg: &TrainConfig,
    pairs: &[(&EncodedPair, &ForwardTrace, f64)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(f64::NAN);
    }
    let hyper = cfg.kd_hyper()?;
    let mut total = 0.0;
    for (pair, teacher_trace, target) in pairs {
        let cache = student.forward(pair, Mode::Inference)?;
        let mse = dcmetric_core::distill::mse_loss(cache.score(), *target);
        let kd = if hyper.kd_weight > 0.0 {
            let trace = cache.to_trace(&student.config);
            dcmetric_core::distill::kd_loss(
                &TracePair {
                    teacher: teacher_trace,
                    student: &trace,
                },
                cfg.kd_norm,
            )?
        } else {
            0.0
        };
        total += hyper.mse_weight * mse + hyper.kd_weight * kd;
    }
    Ok(total / pairs.len() as f64)
}

/// Fine-tunes a clone of `teacher` on human-scored pairs; the teacher
/// provides frozen distillation targets and is never modified.
pub fn finetune(
    teacher: &MetricModel,
    corpus: &[ScoredPair],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run_finetune(teacher, None, corpus, vocab, cfg, None)
}

/// Resumes fine-tuning from a halted run's student weights and optimizer
/// state at an epoch boundary.
pub fn finetune_resume(
    teacher: &MetricModel,
    student: MetricModel,
    corpus: &[ScoredPair],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    state: TrainState,
) -> Result<TrainOutcome> {
    run_finetune(teacher, Some(student), corpus, vocab, cfg, Some(state))
}

fn run_finetune(
    teacher: &MetricModel,
    student_init: Option<MetricModel>,
    corpus: &[ScoredPair],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    state: Option<TrainState>,
) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Finetune {
        return Err(ToolError::Config("config stage must be finetune".into()));
    }
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(ToolError::Other("empty fine-tuning corpus".into()));
    }
    let started = Instant::now();
    let hyper = cfg.kd_hyper()?;

    // Deterministic annotated-data subsample, then train/val split.
    let kept = subsample_indices(corpus.len(), cfg.finetune_data_fraction, cfg.seed);
    let pairs: Vec<&ScoredPair> = kept.iter().map(|&i| &corpus[i]).collect();
    let owned: Vec<ScoredPair> = pairs.iter().map(|p| (*p).clone()).collect();
    let encoded = encode_scored_pairs(&owned, vocab, cfg.max_seq_len)?;
    let targets: Vec<f64> = owned.iter().map(|p| p.normalized_score).collect();

    // The teacher is frozen, so its traces are computed once up front.
    let teacher_traces: Vec<ForwardTrace> = encoded
        .iter()
        .map(|p| teacher.forward_trace(p).map_err(ToolError::from))
        .collect::<Result<_>>()?;

    let (train_idx, val_idx) = split_train_val(encoded.len(), cfg.val_fraction, cfg.seed);
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;

    let mut student = match student_init {
        Some(s) => {
            if s.config != teacher.config {
                return Err(ToolError::Checkpoint(
                    "resumed student and teacher configs differ".into(),
                ));
            }
            s
        }
        None => teacher.clone_model(),
    };
    let num_params = student.params.num_params(&student.config);
    let (start_epoch, mut adam) = match state {
        Some(s) => {
            if s.adam.m.len() != num_params {
                return Err(ToolError::Checkpoint(
                    "optimizer state does not match the model size".into(),
                ));
            }
            (s.next_epoch, s.adam)
        }
        None => (0, AdamState::new(num_params)),
    };
    let end_epoch = if cfg.stop_after_epochs > 0 {
        cfg.stop_after_epochs.min(cfg.epochs)
    } else {
        cfg.epochs
    };
    if start_epoch >= end_epoch {
        return Err(ToolError::Config(format!(
            "resume epoch {start_epoch} is not below the end epoch {end_epoch}"
        )));
    }

    let mut lines = Vec::new();
    let mut best: Option<(f64, usize, MetricModel)> = None;
    let mut global_step = (start_epoch * steps_per_epoch) as u64;

    for epoch in start_epoch..end_epoch {
        let epoch_started = Instant::now();
        let mut order = train_idx.clone();
        Rng::derived(cfg.seed, STREAM_EPOCH + epoch as u64).shuffle(&mut order);
        let mut epoch_loss_sum = 0.0;
        let mut epoch_batches = 0usize;

        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_scale = 1.0 / batch.len() as f64;
            let mut grads = Params::zeros(&student.config);
            let mut mse_sum = 0.0;
            let mut kd_sum = 0.0;

            for (bi, &idx) in batch.iter().enumerate() {
                let cache = student.forward(
                    &encoded[idx],
                    Mode::Train {
                        dropout_seed: dropout_seed(cfg.seed, epoch, step, bi),
                    },
                )?;
                let mse = dcmetric_core::distill::mse_loss(cache.score(), targets[idx]);
                mse_sum += mse;

                let score_grad =
                    hyper.mse_weight * 2.0 * (cache.score() - targets[idx]) * batch_scale;
                if hyper.kd_weight > 0.0 {
                    let student_trace = cache.to_trace(&student.config);
                    let (kd, kd_grads) = kd_loss_with_grad(
                        &TracePair {
                            teacher: &teacher_traces[idx],
                            student: &student_trace,
                        },
                        cfg.kd_norm,
                    )?;
                    kd_sum += kd;
                    let w = hyper.kd_weight * batch_scale;
                    let scaled_outputs: Vec<Vec<f64>> = kd_grads
                        .layer_outputs
                        .iter()
                        .map(|g| g.iter().map(|v| w * v).collect())
                        .collect();
                    let scaled_attn: Vec<Vec<f64>> = kd_grads
                        .attention_scores
                        .iter()
                        .map(|g| g.iter().map(|v| w * v).collect())
                        .collect();
                    let upstream = OutputGrads {
                        score: score_grad,
                        prediction: w * kd_grads.prediction,
                        pooled: None,
                        layer_outputs: Some(&scaled_outputs),
                        attention_scores: Some(&scaled_attn),
                    };
                    student.backward(&cache, &upstream, &mut grads)?;
                } else {
                    let upstream = OutputGrads {
                        score: score_grad,
                        ..Default::default()
                    };
                    student.backward(&cache, &upstream, &mut grads)?;
                }
            }

            if cfg.fix_encoder {
                let scorer = std::mem::take(&mut grads.scorer);
                grads = Params::zeros(&student.config);
                grads.scorer = scorer;
            }

            let mse_mean = mse_sum * batch_scale;
            let kd_mean = kd_sum * batch_scale;
            let total = hyper.mse_weight * mse_mean + hyper.kd_weight * kd_mean;
            if !total.is_finite() {
                return Err(ToolError::Diverged { step: global_step });
            }

            let mut flat_grads = grads.flatten(&student.config);
            clip_global_norm(&mut flat_grads, cfg.clip_norm);
            let lr = cfg.learning_rate
                * warmup_scale(global_step, total_steps, cfg.warmup_fraction);
            let mut flat_params = student.params.flatten(&student.config);
            adam.step(&mut flat_params, &flat_grads, lr, cfg.beta1, cfg.beta2, ADAM_EPS)?;
            student.params.assign_flat(&flat_params);

            epoch_loss_sum += total;
            epoch_batches += 1;
            lines.push(LogLine::Step {
                step: global_step,
                components: vec![
                    ("mse".into(), mse_mean),
                    ("kd".into(), kd_mean),
                    ("mse_weighted".into(), hyper.mse_weight * mse_mean),
                    ("kd_weighted".into(), hyper.kd_weight * kd_mean),
                ],
                total,
            });
            global_step += 1;
        }

        let train_total = epoch_loss_sum / epoch_batches.max(1) as f64;
        let val_pairs: Vec<(&EncodedPair, &ForwardTrace, f64)> = val_idx
            .iter()
            .map(|&i| (&encoded[i], &teacher_traces[i], targets[i]))
            .collect();
        let val_total = if val_pairs.is_empty() {
            train_total
        } else {
            finetune_eval_loss(&student, cfg, &val_pairs)?
        };
        lines.push(LogLine::Epoch {
            epoch,
            train_total,
            val_total,
            wall_ms: epoch_started.elapsed().as_millis(),
        });
        if best.as_ref().is_none_or(|(b, _, _)| val_total < *b) {
            best = Some((val_total, epoch, student.clone()));
        }
    }

    let (_, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best: best_model,
        last: student,
        best_epoch,
        log: TrainLog {
            lines,
            config_hash: cfg.hash(),
            wall_ms: started.elapsed().as_millis(),
        },
        state: TrainState {
            next_epoch: end_epoch,
            adam,
        },
    })
}

/// A fine-tuning objective variant, as compared in the data-scale sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneObjective {
    KdMse,
    Mse,
    MseFixEncoder,
}

impl FinetuneObjective {
    pub const ALL: [FinetuneObjective; 3] = [
        FinetuneObjective::KdMse,
        FinetuneObjective::Mse,
        FinetuneObjective::MseFixEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FinetuneObjective::KdMse => "kd_mse",
            FinetuneObjective::Mse => "mse",
            FinetuneObjective::MseFixEncoder => "mse_fix_encoder",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "kd_mse" => FinetuneObjective::KdMse,
            "mse" => FinetuneObjective::Mse,
            "mse_fix_encoder" => FinetuneObjective::MseFixEncoder,
            other => {
                return Err(ToolError::Config(format!(
                    "unknown finetune objective {other:?} \
                     (expected kd_mse|mse|mse_fix_encoder)"
                )))
            }
        })
    }

    pub fn configure(self, cfg: &mut TrainConfig) {
        match self {
            FinetuneObjective::KdMse => {
                cfg.disable_kd = false;
                cfg.fix_encoder = false;
            }
            FinetuneObjective::Mse => {
                cfg.disable_kd = true;
                cfg.fix_encoder = false;
            }
            FinetuneObjective::MseFixEncoder => {
                cfg.disable_kd = true;
                cfg.fix_encoder = true;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub objective: &'static str,
    pub fraction: f64,
    pub report: CorrelationReport,
}

/// Fine-tunes once per (objective, fraction) pair on a deterministic
/// subsample and evaluates held-out correlations.
pub fn run_data_fraction_sweep(
    teacher: &MetricModel,
    corpus: &[ScoredPair],
    vocab: &Vocabulary,
    eval_set: &[ScoredPair],
    cfg: &TrainConfig,
    fractions: &[f64],
    objectives: &[FinetuneObjective],
) -> Result<Vec<SweepRow>> {
    if fractions.is_empty() {
        return Err(ToolError::Config("empty fraction list".into()));
    }
    if fractions
        .iter()
        .any(|&f| !(0.0 < f && f <= 1.0))
    {
        return Err(ToolError::Config("fractions must lie in (0, 1]".into()));
    }
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(ToolError::Config("fractions must be sorted ascending".into()));
    }
    let mut rows = Vec::new();
    for &objective in objectives {
        for &fraction in fractions {
            let mut run_cfg = cfg.clone();
            run_cfg.finetune_data_fraction = fraction;
            objective.configure(&mut run_cfg);
            let outcome = finetune(teacher, corpus, vocab, &run_cfg)?;
            let report = crate::eval::evaluate_model(&outcome.best, vocab, eval_set)?;
            rows.push(SweepRow {
                objective: objective.name(),
                fraction,
                report,
            });
        }
    }
    Ok(rows)
}
