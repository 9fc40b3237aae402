//! JSON-lines corpus loaders and the vocabulary file format.
//!
//! Pre-training records: `{"context": [..], "responses": {"1": [..], ..}}`,
//! one JSON object per line, level keys forming a contiguous range 1..L.
//! Fine-tuning records: `{"context": [..], "response": "..", "score": x}`.
//! Vocabulary file: one token per line, line number = id, the four
//! reserved tokens first.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use dcmetric_core::corpus::{
    MultiLevelExample, ScoredPair, Utterance, Vocabulary, RESERVED_TOKENS,
};

use crate::error::{Result, ToolError};

#[derive(Deserialize)]
struct PretrainRecord {
    context: Vec<String>,
    responses: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct FinetuneRecord {
    context: Vec<String>,
    response: String,
    score: f64,
}

fn record_err(path: &Path, line: usize, message: impl Into<String>) -> ToolError {
    ToolError::Record {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn utterances(texts: &[String], path: &Path, line: usize, what: &str) -> Result<Vec<Utterance>> {
    texts
        .iter()
        .map(|t| {
            Utterance::new(t.clone())
                .map_err(|e| record_err(path, line, format!("{what}: {e}")))
        })
        .collect()
}

/// Loads and validates a pre-training corpus. With `expected_levels`, every
/// record must have exactly that many coherence levels.
pub fn load_pretrain_corpus(
    path: impl AsRef<Path>,
    expected_levels: Option<usize>,
) -> Result<Vec<MultiLevelExample>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PretrainRecord = serde_json::from_str(&line)
            .map_err(|e| record_err(path, line_no, format!("malformed record: {e}")))?;

        let mut levels: Vec<(usize, Vec<String>)> = Vec::with_capacity(record.responses.len());
        for (key, responses) in record.responses {
            let level: usize = key.parse().map_err(|_| {
                record_err(path, line_no, format!("level key {key:?} is not an integer"))
            })?;
            levels.push((level, responses));
        }
        levels.sort_by_key(|(level, _)| *level);
        for (i, (level, _)) in levels.iter().enumerate() {
            if *level != i + 1 {
                return Err(record_err(
                    path,
                    line_no,
                    format!(
                        "non-contiguous levels: expected level {}, found {}",
                        i + 1,
                        level
                    ),
                ));
            }
        }
        if let Some(expected) = expected_levels {
            if levels.len() != expected {
                return Err(record_err(
                    path,
                    line_no,
                    format!("expected {expected} levels, found {}", levels.len()),
                ));
            }
        }

        let context = utterances(&record.context, path, line_no, "context")?;
        let mut level_utts = Vec::with_capacity(levels.len());
        for (level, responses) in &levels {
            if responses.is_empty() {
                return Err(record_err(path, line_no, format!("level {level} is empty")));
            }
            level_utts.push(utterances(
                responses,
                path,
                line_no,
                &format!("level {level} response"),
            )?);
        }
        let example = MultiLevelExample::new(context, level_utts)
            .map_err(|e| record_err(path, line_no, e.to_string()))?;
        out.push(example);
    }
    Ok(out)
}

/// Loads fine-tuning or evaluation records, validating that every score
/// lies within the declared bounds and filling the normalized score.
pub fn load_finetune_corpus(
    path: impl AsRef<Path>,
    score_min: f64,
    score_max: f64,
) -> Result<Vec<ScoredPair>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FinetuneRecord = serde_json::from_str(&line)
            .map_err(|e| record_err(path, line_no, format!("malformed record: {e}")))?;
        let context = utterances(&record.context, path, line_no, "context")?;
        let response = Utterance::new(record.response)
            .map_err(|e| record_err(path, line_no, format!("response: {e}")))?;
        let pair = ScoredPair::new(context, response, record.score, score_min, score_max)
            .map_err(|e| record_err(path, line_no, e.to_string()))?;
        out.push(pair);
    }
    Ok(out)
}

/// Writes a vocabulary as one token per line (line number = id).
pub fn save_vocabulary(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for token in vocab.tokens() {
        writeln!(file, "{token}")?;
    }
    Ok(())
}

/// Reads a vocabulary file, checking the reserved-token header.
pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let tokens: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    if tokens.len() < RESERVED_TOKENS.len() {
        return Err(record_err(path, tokens.len(), "vocabulary file too short"));
    }
    for (i, expected) in RESERVED_TOKENS.iter().enumerate() {
        if tokens[i] != *expected {
            return Err(record_err(
                path,
                i + 1,
                format!("expected reserved token {expected}, found {:?}", tokens[i]),
            ));
        }
    }
    Ok(Vocabulary::from_tokens(
        tokens[RESERVED_TOKENS.len()..].iter().cloned(),
    )?)
}
