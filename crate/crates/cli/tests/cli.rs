//! End-to-end checks of the command-line binary: exit codes, file
//! round-trips and the full pretrain -> finetune -> evaluate -> visualize
//! chain on a small synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dcmetric"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dcmetric-cli-{tag}-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_synthetic_corpora(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    use dcmetric::synth::{gen_pretrain_corpus, gen_scored_pairs};
    let pt = gen_pretrain_corpus(24, 3, 3, 77).unwrap();
    let pt_path = dir.join("pretrain.jsonl");
    let mut lines = String::new();
    for ex in &pt {
        let context: Vec<&str> = ex.context.iter().map(|u| u.text()).collect();
        let mut responses = serde_json::Map::new();
        for (j, level) in ex.levels.iter().enumerate() {
            responses.insert(
                (j + 1).to_string(),
                serde_json::json!(level.iter().map(|u| u.text()).collect::<Vec<_>>()),
            );
        }
        lines.push_str(
            &serde_json::json!({"context": context, "responses": responses}).to_string(),
        );
        lines.push('\n');
    }
    fs::write(&pt_path, lines).unwrap();

    let scored = |seed: u64, path: &Path| {
        let pairs = gen_scored_pairs(30, 3, 0.5, 1.0, 5.0, seed).unwrap();
        let mut lines = String::new();
        for p in &pairs {
            let context: Vec<&str> = p.context.iter().map(|u| u.text()).collect();
            lines.push_str(
                &serde_json::json!({
                    "context": context,
                    "response": p.response.text(),
                    "score": p.human_score,
                })
                .to_string(),
            );
            lines.push('\n');
        }
        fs::write(path, lines).unwrap();
    };
    let ft_path = dir.join("finetune.jsonl");
    scored(88, &ft_path);
    let eval_path = dir.join("eval.jsonl");
    scored(99, &eval_path);
    (pt_path, ft_path, eval_path)
}

#[test]
fn selftest_exits_zero() {
    let out = run(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS]"));
}

#[test]
fn unknown_subcommand_exits_two() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_flag_names_it() {
    let out = run(&["pretrain"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--data"), "{stderr}");
}

#[test]
fn unknown_flag_exits_two() {
    let out = run(&["selftest", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one_with_diagnostic() {
    let out = run(&[
        "evaluate",
        "--checkpoint",
        "/nonexistent/model.ckpt",
        "--vocab",
        "/nonexistent/vocab.txt",
        "--data",
        "/nonexistent/eval.jsonl",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error:"), "{stderr}");
}

#[test]
fn full_chain_pretrain_finetune_evaluate_visualize() {
    let dir = tmp_dir("chain");
    let (pt, ft, eval) = write_synthetic_corpora(&dir);
    let ckpt = dir.join("teacher.ckpt");
    let vocab = dir.join("vocab.txt");
    let log = dir.join("train.jsonl");

    let out = run(&[
        "pretrain",
        "--data",
        pt.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--vocab-out",
        vocab.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
        "--seed",
        "5",
        "--set",
        "epochs=2",
        "--levels",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists() && vocab.exists() && log.exists());

    // The vocabulary file leads with the reserved tokens.
    let vocab_text = fs::read_to_string(&vocab).unwrap();
    let head: Vec<&str> = vocab_text.lines().take(4).collect();
    assert_eq!(head, vec!["[PAD]", "[UNK]", "[CLS]", "[SEP]"]);

    let student = dir.join("student.ckpt");
    let out = run(&[
        "finetune",
        "--data",
        ft.to_str().unwrap(),
        "--teacher",
        ckpt.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--out",
        student.to_str().unwrap(),
        "--seed",
        "5",
        "--set",
        "epochs=2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report = dir.join("report.json");
    let out = run(&[
        "evaluate",
        "--checkpoint",
        student.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--data",
        eval.to_str().unwrap(),
        "--name",
        "synth",
        "--json-out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Pearson") && stdout.contains("synth"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json["report"]["pearson"].is_number());

    let viz_dir = dir.join("viz");
    let out = run(&[
        "visualize",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--data",
        pt.to_str().unwrap(),
        "--out-dir",
        viz_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "score_distribution.csv",
        "score_distribution.json",
        "feature_projection.csv",
        "feature_projection.json",
    ] {
        assert!(viz_dir.join(file).exists(), "missing {file}");
    }
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_subcommand_emits_curves() {
    let dir = tmp_dir("sweep");
    let (pt, ft, eval) = write_synthetic_corpora(&dir);
    let ckpt = dir.join("teacher.ckpt");
    let out = run(&[
        "pretrain",
        "--data",
        pt.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--seed",
        "5",
        "--set",
        "epochs=2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let curves = dir.join("curves.csv");
    let out = run(&[
        "sweep",
        "--teacher",
        ckpt.to_str().unwrap(),
        "--vocab",
        ckpt.with_extension("vocab").to_str().unwrap(),
        "--data",
        ft.to_str().unwrap(),
        "--eval-data",
        eval.to_str().unwrap(),
        "--fractions",
        "0.5,1.0",
        "--objectives",
        "kd_mse",
        "--out",
        curves.to_str().unwrap(),
        "--set",
        "epochs=2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&curves).unwrap();
    assert!(text.starts_with("objective,fraction,avg_correlation\n"));
    assert_eq!(text.lines().count(), 3);
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn checkpoint_vocab_mismatch_is_reported() {
    let dir = tmp_dir("mismatch");
    let (pt, _, _) = write_synthetic_corpora(&dir);
    let ckpt = dir.join("teacher.ckpt");
    let out = run(&[
        "pretrain",
        "--data",
        pt.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--set",
        "epochs=1",
    ]);
    assert!(out.status.success());
    // A vocabulary with extra tokens no longer matches the embedding.
    let vocab_path = ckpt.with_extension("vocab");
    let mut text = fs::read_to_string(&vocab_path).unwrap();
    text.push_str("extraneous\n");
    fs::write(&vocab_path, text).unwrap();
    let out = run(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--vocab",
        vocab_path.to_str().unwrap(),
        "--data",
        pt.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("vocab"), "{stderr}");
    fs::remove_dir_all(&dir).ok();
}
