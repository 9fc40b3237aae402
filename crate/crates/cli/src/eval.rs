//! Correlation evaluation against human scores, the ablation suite and
//! report formatting.

use dcmetric_core::corpus::{encode_pair, MultiLevelExample, ScoredPair, SimpleTokenizer, Vocabulary};
use dcmetric_core::model::{init_model, MetricModel};
use dcmetric_core::stats::CorrelationReport;

use crate::config::{Stage, TrainConfig};
use crate::error::{Result, ToolError};
use crate::pipeline::{finetune, pretrain};

/// Significance threshold for the star annotation in text tables.
pub const SIGNIFICANCE_ALPHA: f64 = 0.05;

/// Scores every pair with the model, in corpus order.
pub fn score_pairs(
    model: &MetricModel,
    vocab: &Vocabulary,
    pairs: &[ScoredPair],
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            let encoded = encode_pair(
                &p.context,
                &p.response,
                vocab,
                &SimpleTokenizer,
                model.config.max_seq_len,
            )?;
            Ok(model.forward_score(&encoded)?)
        })
        .collect()
}

/// Correlates model scores with the raw human scores of an evaluation set.
///
/// Correlations are invariant to the affine score normalization, so the
/// human scores are used as annotated. A constant-output model is reported
/// as such rather than as a bare zero-variance error.
pub fn evaluate_model(
    model: &MetricModel,
    vocab: &Vocabulary,
    eval_set: &[ScoredPair],
) -> Result<CorrelationReport> {
    let predicted = score_pairs(model, vocab, eval_set)?;
    let human: Vec<f64> = eval_set.iter().map(|p| p.human_score).collect();
    if predicted.len() >= 3 && predicted.iter().all(|&s| s == predicted[0]) {
        return Err(ToolError::ConstantModelOutput { value: predicted[0] });
    }
    Ok(CorrelationReport::from_scores(&predicted, &human)?)
}

/// One named configuration's correlations across the evaluation sets.
#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub name: String,
    pub datasets: Vec<(String, CorrelationReport)>,
    pub config_hash: u64,
}

/// The ablation variants: the full pipeline, dropping pre-training
/// entirely, dropping one ranking component at a time, and dropping the
/// distillation term during fine-tuning.
pub const ABLATION_VARIANTS: [&str; 6] = [
    "full",
    "no_pretrain",
    "no_sep",
    "no_com",
    "no_ord",
    "no_kd_finetune",
];

/// Runs the full two-stage pipeline once per ablation variant and
/// tabulates correlations per evaluation set.
pub fn run_ablation_suite(
    corpus_pt: &[MultiLevelExample],
    corpus_ft: &[ScoredPair],
    eval_sets: &[(String, Vec<ScoredPair>)],
    pretrain_cfg: &TrainConfig,
    finetune_cfg: &TrainConfig,
) -> Result<Vec<BenchmarkResult>> {
    {
        let mut names: Vec<&str> = eval_sets.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != eval_sets.len() {
            return Err(ToolError::Config("duplicate evaluation set name".into()));
        }
    }
    let vocab = Vocabulary::build(corpus_pt, &SimpleTokenizer, pretrain_cfg.min_freq)?;
    let mut results = Vec::new();
    for &variant in &ABLATION_VARIANTS {
        let mut pt_cfg = pretrain_cfg.clone();
        pt_cfg.stage = Stage::Pretrain;
        let mut ft_cfg = finetune_cfg.clone();
        ft_cfg.stage = Stage::Finetune;
        match variant {
            "full" | "no_pretrain" => {}
            "no_sep" => pt_cfg.disable_sep = true,
            "no_com" => pt_cfg.disable_com = true,
            "no_ord" => pt_cfg.disable_ord = true,
            "no_kd_finetune" => ft_cfg.disable_kd = true,
            _ => unreachable!(),
        }

        let init = init_model(pt_cfg.model_config(vocab.len()))?;
        let teacher = if variant == "no_pretrain" {
            init
        } else {
            pretrain(init, corpus_pt, &vocab, &pt_cfg)?.best
        };
        let student = finetune(&teacher, corpus_ft, &vocab, &ft_cfg)?.best;

        let mut datasets = Vec::new();
        for (name, eval_set) in eval_sets {
            let report = evaluate_model(&student, &vocab, eval_set)?;
            datasets.push((name.clone(), report));
        }
        results.push(BenchmarkResult {
            name: variant.to_string(),
            datasets,
            config_hash: ft_cfg.hash() ^ pt_cfg.hash(),
        });
    }
    Ok(results)
}

fn fmt_coef(value: f64, p: f64) -> String {
    if p > SIGNIFICANCE_ALPHA {
        format!("{value:.3}*")
    } else {
        format!("{value:.3}")
    }
}

/// Aligned text table, one block per evaluation set, columns Pearson,
/// Spearman, Kendall, Average; `*` marks p > 0.05.
pub fn format_benchmark_table(results: &[BenchmarkResult]) -> String {
    let mut out = String::new();
    if results.is_empty() {
        return out;
    }
    let name_width = results
        .iter()
        .map(|r| r.name.len())
        .chain(["Metric".len()])
        .max()
        .unwrap();
    let dataset_names: Vec<&String> =
        results[0].datasets.iter().map(|(n, _)| n).collect();
    for dataset in dataset_names {
        out.push_str(&format!("== {dataset} ==\n"));
        out.push_str(&format!(
            "{:<name_width$}  {:>9}  {:>9}  {:>9}  {:>9}\n",
            "Metric", "Pearson", "Spearman", "Kendall", "Average"
        ));
        for result in results {
            if let Some((_, report)) = result.datasets.iter().find(|(n, _)| n == dataset) {
                out.push_str(&format!(
                    "{:<name_width$}  {:>9}  {:>9}  {:>9}  {:>9.3}\n",
                    result.name,
                    fmt_coef(report.pearson, report.p_pearson),
                    fmt_coef(report.spearman, report.p_spearman),
                    fmt_coef(report.kendall, report.p_kendall),
                    report.average,
                ));
            }
        }
        out.push('\n');
    }
    out
}

fn report_json(report: &CorrelationReport) -> serde_json::Value {
    serde_json::json!({
        "pearson": report.pearson,
        "spearman": report.spearman,
        "kendall": report.kendall,
        "average": report.average,
        "p_values": {
            "pearson": report.p_pearson,
            "spearman": report.p_spearman,
            "kendall": report.p_kendall,
        },
        "n": report.n,
        "significant_at_0_05": report.all_significant(SIGNIFICANCE_ALPHA),
    })
}

/// Structured JSON document mirroring the text table.
pub fn benchmark_to_json(results: &[BenchmarkResult]) -> serde_json::Value {
    serde_json::json!(results
        .iter()
        .map(|r| {
            serde_json::json!({
                "name": r.name,
                "config_hash": format!("{:016x}", r.config_hash),
                "datasets": r
                    .datasets
                    .iter()
                    .map(|(n, rep)| serde_json::json!({"dataset": n, "report": report_json(rep)}))
                    .collect::<Vec<_>>(),
            })
        })
        .collect::<Vec<_>>())
}

/// JSON for a single evaluation run.
pub fn evaluation_to_json(dataset: &str, report: &CorrelationReport) -> serde_json::Value {
    serde_json::json!({"dataset": dataset, "report": report_json(report)})
}
