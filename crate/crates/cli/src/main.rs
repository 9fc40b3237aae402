//! Command-line front end: pretrain | finetune | evaluate | ablate |
//! sweep | visualize | selftest.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{arg, value_parser, ArgMatches, Command};

use dcmetric::checkpoint::{
    ensure_vocab_compat, load_checkpoint, save_checkpoint, TrainingStage,
};
use dcmetric::config::{Stage, TrainConfig};
use dcmetric::corpus_io::{
    load_finetune_corpus, load_pretrain_corpus, load_vocabulary, save_vocabulary,
};
use dcmetric::error::{Result, ToolError};
use dcmetric::eval::{
    benchmark_to_json, evaluate_model, evaluation_to_json, format_benchmark_table,
    run_ablation_suite, BenchmarkResult,
};
use dcmetric::pipeline::{
    finetune, pretrain, pretrain_resume, run_data_fraction_sweep, FinetuneObjective,
};
use dcmetric::viz::{emit_feature_projection, emit_score_distribution, emit_sweep_curves};
use dcmetric_core::corpus::{SimpleTokenizer, Vocabulary};
use dcmetric_core::model::init_model;

fn cli() -> Command {
    let config_args = |cmd: Command| -> Command {
        cmd.arg(arg!(--config <FILE> "Config file with key = value lines"))
            .arg(
                arg!(--set <KEYVAL> "Override a config key, e.g. --set epochs=3")
                    .action(clap::ArgAction::Append),
            )
            .arg(arg!(--seed <N> "Random seed").value_parser(value_parser!(u64)))
            .arg(arg!(--log <FILE> "Write the training log (JSON lines)"))
    };
    Command::new("dcmetric")
        .about("Train and evaluate a quantifiable dialogue-coherence metric")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("pretrain")
                .about("Multi-level ranking pre-training over a response-set corpus")
                .arg(arg!(--data <FILE> "Pre-training corpus (JSON lines)").required(true))
                .arg(arg!(--out <FILE> "Checkpoint output path").required(true))
                .arg(arg!(--"vocab-out" <FILE> "Vocabulary output path (default: <out>.vocab)"))
                .arg(arg!(--resume <FILE> "Resume from a checkpoint with optimizer state"))
                .arg(
                    arg!(--levels <N> "Expect exactly N coherence levels")
                        .value_parser(value_parser!(usize)),
                ),
        ))
        .subcommand(config_args(
            Command::new("finetune")
                .about("Distillation-regularized fine-tuning on human-scored pairs")
                .arg(arg!(--data <FILE> "Scored-pair corpus (JSON lines)").required(true))
                .arg(arg!(--teacher <FILE> "Pretrained teacher checkpoint").required(true))
                .arg(arg!(--vocab <FILE> "Vocabulary file").required(true))
                .arg(arg!(--out <FILE> "Student checkpoint output path").required(true))
                .arg(arg!(--"best-out" <FILE> "Also write the best-epoch student"))
                .arg(arg!(--resume <FILE> "Resume a halted run from this student checkpoint")),
        ))
        .subcommand(
            Command::new("evaluate")
                .about("Correlate model scores with human scores")
                .arg(arg!(--checkpoint <FILE> "Model checkpoint").required(true))
                .arg(arg!(--vocab <FILE> "Vocabulary file").required(true))
                .arg(arg!(--data <FILE> "Scored-pair evaluation set").required(true))
                .arg(arg!(--name <NAME> "Dataset name for the report").default_value("eval"))
                .arg(arg!(--"json-out" <FILE> "Write the JSON report here"))
                .arg(
                    arg!(--"score-min" <X> "Lower human-score bound")
                        .value_parser(value_parser!(f64))
                        .default_value("1"),
                )
                .arg(
                    arg!(--"score-max" <X> "Upper human-score bound")
                        .value_parser(value_parser!(f64))
                        .default_value("5"),
                ),
        )
        .subcommand(config_args(
            Command::new("ablate")
                .about("Run the component-ablation suite end to end")
                .arg(arg!(--"pretrain-data" <FILE> "Pre-training corpus").required(true))
                .arg(arg!(--"finetune-data" <FILE> "Fine-tuning corpus").required(true))
                .arg(
                    arg!(--"eval-data" <SPEC> "Evaluation sets as name=path[,name=path...]")
                        .required(true),
                )
                .arg(arg!(--"json-out" <FILE> "Write the JSON table here")),
        ))
        .subcommand(config_args(
            Command::new("sweep")
                .about("Fine-tune at several annotated-data fractions and emit curves")
                .arg(arg!(--teacher <FILE> "Pretrained teacher checkpoint").required(true))
                .arg(arg!(--vocab <FILE> "Vocabulary file").required(true))
                .arg(arg!(--data <FILE> "Fine-tuning corpus").required(true))
                .arg(arg!(--"eval-data" <FILE> "Evaluation set").required(true))
                .arg(
                    arg!(--fractions <LIST> "Comma-separated fractions in (0, 1]")
                        .default_value("0.25,0.5,1.0"),
                )
                .arg(
                    arg!(--objectives <LIST> "Comma-separated: kd_mse,mse,mse_fix_encoder")
                        .default_value("kd_mse,mse,mse_fix_encoder"),
                )
                .arg(arg!(--out <FILE> "Curve CSV output path").required(true)),
        ))
        .subcommand(
            Command::new("visualize")
                .about("Emit score-distribution and feature-projection plot data")
                .arg(arg!(--checkpoint <FILE> "Model checkpoint").required(true))
                .arg(arg!(--vocab <FILE> "Vocabulary file").required(true))
                .arg(arg!(--data <FILE> "Pre-training-format corpus to visualize").required(true))
                .arg(arg!(--"out-dir" <DIR> "Output directory").required(true)),
        )
        .subcommand(
            Command::new("selftest")
                .about("Run the built-in oracle suites (hand values, gradients, correlations)"),
        )
}

fn build_config(matches: &ArgMatches, default: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = default;
    if let Some(path) = matches.get_one::<String>("config") {
        cfg.apply_file(path)?;
    }
    if let Some(sets) = matches.get_many::<String>("set") {
        for kv in sets {
            let (key, value) = kv.split_once('=').ok_or_else(|| {
                ToolError::Config(format!("--set expects key=value, got {kv:?}"))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
    }
    if let Some(&seed) = matches.get_one::<u64>("seed") {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_log(matches: &ArgMatches, log: &dcmetric::pipeline::TrainLog) -> Result<()> {
    if let Some(path) = matches.get_one::<String>("log") {
        std::fs::write(path, log.to_jsonl())?;
    }
    Ok(())
}

fn cmd_pretrain(matches: &ArgMatches) -> Result<()> {
    let mut cfg = build_config(matches, TrainConfig::pretrain_default())?;
    cfg.stage = Stage::Pretrain;
    let data = matches.get_one::<String>("data").unwrap();
    let out = PathBuf::from(matches.get_one::<String>("out").unwrap());
    let expected_levels = matches.get_one::<usize>("levels").copied();
    let corpus = load_pretrain_corpus(data, expected_levels)?;

    let outcome = if let Some(resume_path) = matches.get_one::<String>("resume") {
        let ckpt = load_checkpoint(resume_path)?;
        let state = ckpt.state.ok_or_else(|| {
            ToolError::Checkpoint("checkpoint has no optimizer state to resume from".into())
        })?;
        let vocab_path = vocab_out_path(matches, &out);
        let vocab = load_vocabulary(&vocab_path)?;
        ensure_vocab_compat(&ckpt.model, &vocab)?;
        let outcome = pretrain_resume(ckpt.model, &corpus, &vocab, &cfg, state)?;
        save_pretrain_output(&outcome, &cfg, &out)?;
        outcome
    } else {
        let vocab = Vocabulary::build(&corpus, &SimpleTokenizer, cfg.min_freq)?;
        let model = init_model(cfg.model_config(vocab.len()))?;
        let outcome = pretrain(model, &corpus, &vocab, &cfg)?;
        let vocab_path = vocab_out_path(matches, &out);
        save_vocabulary(&vocab, &vocab_path)?;
        save_pretrain_output(&outcome, &cfg, &out)?;
        println!("vocabulary: {} tokens -> {}", vocab.len(), vocab_path.display());
        outcome
    };
    write_log(matches, &outcome.log)?;
    println!(
        "pretrain done: best epoch {} -> {}",
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

fn vocab_out_path(matches: &ArgMatches, out: &Path) -> PathBuf {
    matches
        .get_one::<String>("vocab-out")
        .map(PathBuf::from)
        .unwrap_or_else(|| out.with_extension("vocab"))
}

/// A halted plan writes the last-epoch weights with optimizer state (the
/// pair `--resume` needs); a completed one writes the best-epoch model.
fn save_pretrain_output(
    outcome: &dcmetric::pipeline::TrainOutcome,
    cfg: &TrainConfig,
    out: &Path,
) -> Result<()> {
    if cfg.stop_after_epochs > 0 && cfg.stop_after_epochs < cfg.epochs {
        save_checkpoint(&outcome.last, TrainingStage::Pretrained, Some(&outcome.state), out)
    } else {
        save_checkpoint(&outcome.best, TrainingStage::Pretrained, None, out)
    }
}

fn cmd_finetune(matches: &ArgMatches) -> Result<()> {
    let mut cfg = build_config(matches, TrainConfig::finetune_default())?;
    cfg.stage = Stage::Finetune;
    let corpus = load_finetune_corpus(
        matches.get_one::<String>("data").unwrap(),
        cfg.score_min,
        cfg.score_max,
    )?;
    let vocab = load_vocabulary(matches.get_one::<String>("vocab").unwrap())?;
    let teacher = load_checkpoint(matches.get_one::<String>("teacher").unwrap())?.model;
    ensure_vocab_compat(&teacher, &vocab)?;
    let outcome = if let Some(resume_path) = matches.get_one::<String>("resume") {
        let mid = load_checkpoint(resume_path)?;
        let state = mid.state.ok_or_else(|| {
            ToolError::Checkpoint("checkpoint has no optimizer state to resume from".into())
        })?;
        dcmetric::pipeline::finetune_resume(&teacher, mid.model, &corpus, &vocab, &cfg, state)?
    } else {
        finetune(&teacher, &corpus, &vocab, &cfg)?
    };
    let out = PathBuf::from(matches.get_one::<String>("out").unwrap());
    // The last-epoch student goes to --out; the best-epoch one to
    // --best-out when requested.
    save_checkpoint(&outcome.last, TrainingStage::Finetuned, Some(&outcome.state), &out)?;
    if let Some(best_path) = matches.get_one::<String>("best-out") {
        save_checkpoint(&outcome.best, TrainingStage::Finetuned, None, Path::new(best_path))?;
    }
    write_log(matches, &outcome.log)?;
    println!(
        "finetune done: best epoch {} -> {}",
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

fn cmd_evaluate(matches: &ArgMatches) -> Result<()> {
    let vocab = load_vocabulary(matches.get_one::<String>("vocab").unwrap())?;
    let model = load_checkpoint(matches.get_one::<String>("checkpoint").unwrap())?.model;
    ensure_vocab_compat(&model, &vocab)?;
    let eval_set = load_finetune_corpus(
        matches.get_one::<String>("data").unwrap(),
        *matches.get_one::<f64>("score-min").unwrap(),
        *matches.get_one::<f64>("score-max").unwrap(),
    )?;
    let name = matches.get_one::<String>("name").unwrap();
    let report = evaluate_model(&model, &vocab, &eval_set)?;
    let result = BenchmarkResult {
        name: "model".into(),
        datasets: vec![(name.clone(), report.clone())],
        config_hash: 0,
    };
    print!("{}", format_benchmark_table(&[result]));
    if let Some(path) = matches.get_one::<String>("json-out") {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&evaluation_to_json(name, &report))? + "\n",
        )?;
    }
    Ok(())
}

fn parse_eval_sets(spec: &str, score_min: f64, score_max: f64) -> Result<Vec<(String, Vec<dcmetric_core::corpus::ScoredPair>)>> {
    spec.split(',')
        .map(|part| {
            let (name, path) = part.split_once('=').ok_or_else(|| {
                ToolError::Config(format!("--eval-data expects name=path, got {part:?}"))
            })?;
            Ok((
                name.trim().to_string(),
                load_finetune_corpus(path.trim(), score_min, score_max)?,
            ))
        })
        .collect()
}

fn cmd_ablate(matches: &ArgMatches) -> Result<()> {
    let pt_cfg = build_config(matches, TrainConfig::pretrain_default())?;
    let mut ft_cfg = build_config(matches, TrainConfig::finetune_default())?;
    ft_cfg.stage = Stage::Finetune;
    let corpus_pt = load_pretrain_corpus(matches.get_one::<String>("pretrain-data").unwrap(), None)?;
    let corpus_ft = load_finetune_corpus(
        matches.get_one::<String>("finetune-data").unwrap(),
        ft_cfg.score_min,
        ft_cfg.score_max,
    )?;
    let eval_sets = parse_eval_sets(
        matches.get_one::<String>("eval-data").unwrap(),
        ft_cfg.score_min,
        ft_cfg.score_max,
    )?;
    let results = run_ablation_suite(&corpus_pt, &corpus_ft, &eval_sets, &pt_cfg, &ft_cfg)?;
    print!("{}", format_benchmark_table(&results));
    if let Some(path) = matches.get_one::<String>("json-out") {
        std::fs::write(
            path,
            serde_json::to_string_pretty(&benchmark_to_json(&results))? + "\n",
        )?;
    }
    Ok(())
}

fn cmd_sweep(matches: &ArgMatches) -> Result<()> {
    let mut cfg = build_config(matches, TrainConfig::finetune_default())?;
    cfg.stage = Stage::Finetune;
    let vocab = load_vocabulary(matches.get_one::<String>("vocab").unwrap())?;
    let teacher = load_checkpoint(matches.get_one::<String>("teacher").unwrap())?.model;
    ensure_vocab_compat(&teacher, &vocab)?;
    let corpus = load_finetune_corpus(
        matches.get_one::<String>("data").unwrap(),
        cfg.score_min,
        cfg.score_max,
    )?;
    let eval_set = load_finetune_corpus(
        matches.get_one::<String>("eval-data").unwrap(),
        cfg.score_min,
        cfg.score_max,
    )?;
    let fractions: Vec<f64> = matches
        .get_one::<String>("fractions")
        .unwrap()
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| ToolError::Config(format!("bad fraction {s:?}")))
        })
        .collect::<Result<_>>()?;
    let objectives: Vec<FinetuneObjective> = matches
        .get_one::<String>("objectives")
        .unwrap()
        .split(',')
        .map(|s| FinetuneObjective::parse(s.trim()))
        .collect::<Result<_>>()?;
    let rows = run_data_fraction_sweep(
        &teacher, &corpus, &vocab, &eval_set, &cfg, &fractions, &objectives,
    )?;
    let out = PathBuf::from(matches.get_one::<String>("out").unwrap());
    emit_sweep_curves(&rows, &out)?;
    for row in &rows {
        println!(
            "{} fraction {}: avg correlation {:.3}",
            row.objective, row.fraction, row.report.average
        );
    }
    println!("curves -> {}", out.display());
    Ok(())
}

fn cmd_visualize(matches: &ArgMatches) -> Result<()> {
    let vocab = load_vocabulary(matches.get_one::<String>("vocab").unwrap())?;
    let model = load_checkpoint(matches.get_one::<String>("checkpoint").unwrap())?.model;
    ensure_vocab_compat(&model, &vocab)?;
    let corpus = load_pretrain_corpus(matches.get_one::<String>("data").unwrap(), None)?;
    let out_dir = PathBuf::from(matches.get_one::<String>("out-dir").unwrap());
    std::fs::create_dir_all(&out_dir)?;
    let scores_csv = out_dir.join("score_distribution.csv");
    let dump = emit_score_distribution(&model, &vocab, &corpus, &scores_csv)?;
    println!("score distribution ({} levels) -> {}", dump.levels.len(), scores_csv.display());
    let proj_csv = out_dir.join("feature_projection.csv");
    let proj = emit_feature_projection(&model, &vocab, &corpus, &proj_csv)?;
    println!(
        "feature projection ({} points, explained {:.2}/{:.2}) -> {}",
        proj.points, proj.explained_variance[0], proj.explained_variance[1], proj_csv.display()
    );
    Ok(())
}

fn run(matches: &ArgMatches) -> Result<()> {
    match matches.subcommand() {
        Some(("pretrain", m)) => cmd_pretrain(m),
        Some(("finetune", m)) => cmd_finetune(m),
        Some(("evaluate", m)) => cmd_evaluate(m),
        Some(("ablate", m)) => cmd_ablate(m),
        Some(("sweep", m)) => cmd_sweep(m),
        Some(("visualize", m)) => cmd_visualize(m),
        Some(("selftest", _)) => dcmetric::selftest::run_selftest(),
        _ => unreachable!("subcommand required"),
    }
}

fn main() -> ExitCode {
    // Usage errors exit 2 via clap; runtime failures exit 1 with a
    // one-line diagnostic.
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
