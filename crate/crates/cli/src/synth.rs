//! Synthetic dialogue corpora for self-tests and end-to-end checks.
//!
//! Responses carry level-identifying marker tokens mixed with shared
//! filler, so a working encoder can separate coherence levels; scored
//! pairs map the level to a Likert-range score with configurable label
//! noise.

use dcmetric_core::corpus::{MultiLevelExample, ScoredPair, Utterance};
use dcmetric_core::rng::Rng;

use crate::error::Result;

const CONTEXT_POOL: [&str; 20] = [
    "where", "what", "how", "really", "today", "maybe", "train", "ticket", "lunch", "music",
    "garden", "late", "happy", "ready", "soon", "never", "blue", "quiet", "left", "right",
];

const FILLER_POOL: [&str; 10] = [
    "well", "so", "then", "just", "quite", "very", "bit", "sort", "kind", "still",
];

fn marker(level: usize, variant: usize) -> String {
    format!("tone{level}{}", (b'a' + (variant % 2) as u8) as char)
}

fn random_context(rng: &mut Rng) -> Vec<Utterance> {
    (0..2)
        .map(|_| {
            let words: Vec<&str> = (0..3 + rng.below(2))
                .map(|_| CONTEXT_POOL[rng.below(CONTEXT_POOL.len())])
                .collect();
            Utterance::new(words.join(" ")).expect("non-empty by construction")
        })
        .collect()
}

fn random_response(level: usize, rng: &mut Rng) -> Utterance {
    let mut words = vec![marker(level, 0)];
    for _ in 0..1 + rng.below(3) {
        words.push(FILLER_POOL[rng.below(FILLER_POOL.len())].to_string());
    }
    words.push(marker(level, 1));
    rng.shuffle(&mut words);
    Utterance::new(words.join(" ")).expect("non-empty by construction")
}

/// A separable multi-level corpus: `levels` coherence levels with
/// `per_level` responses each.
pub fn gen_pretrain_corpus(
    num_examples: usize,
    levels: usize,
    per_level: usize,
    seed: u64,
) -> Result<Vec<MultiLevelExample>> {
    let mut rng = Rng::derived(seed, 0x5E17);
    (0..num_examples)
        .map(|_| {
            let context = random_context(&mut rng);
            let level_responses = (1..=levels)
                .map(|level| (0..per_level).map(|_| random_response(level, &mut rng)).collect())
                .collect();
            Ok(MultiLevelExample::new(context, level_responses)?)
        })
        .collect()
}

/// Token whose presence in a response raises the human score beyond what
/// the coherence level alone explains; annotated data is the only way a
/// model can learn its weight.
pub const BONUS_TOKEN: &str = "happy";

/// Human-scored pairs whose score tracks the response's marker level:
/// level j maps to `score_min + (j-1)/(levels-1) * (score_max-score_min)`
/// plus Gaussian label noise, clamped to the bounds.
pub fn gen_scored_pairs(
    num_pairs: usize,
    levels: usize,
    noise: f64,
    score_min: f64,
    score_max: f64,
    seed: u64,
) -> Result<Vec<ScoredPair>> {
    gen_scored_pairs_with_bonus(num_pairs, levels, noise, 0.0, score_min, score_max, seed)
}

/// Like [`gen_scored_pairs`], but half the responses carry [`BONUS_TOKEN`]
/// and earn `bonus` extra score: a human rating standard the pre-training
/// levels do not encode.
pub fn gen_scored_pairs_with_bonus(
    num_pairs: usize,
    levels: usize,
    noise: f64,
    bonus: f64,
    score_min: f64,
    score_max: f64,
    seed: u64,
) -> Result<Vec<ScoredPair>> {
    let mut rng = Rng::derived(seed, 0x5C0E);
    (0..num_pairs)
        .map(|i| {
            let level = 1 + (i % levels);
            let context = random_context(&mut rng);
            let mut response_text = random_response(level, &mut rng).text().to_string();
            let mut clean = score_min
                + (level - 1) as f64 / (levels - 1).max(1) as f64 * (score_max - score_min);
            if bonus != 0.0 && rng.next_f64() < 0.5 {
                response_text.push(' ');
                response_text.push_str(BONUS_TOKEN);
                clean += bonus;
            }
            let response = Utterance::new(response_text).expect("non-empty by construction");
            let score = (clean + noise * rng.normal()).clamp(score_min, score_max);
            Ok(ScoredPair::new(context, response, score, score_min, score_max)?)
        })
        .collect()
}

/// Fraction of held-out examples whose per-level mean scores ascend
/// strictly with the level.
pub fn level_ordering_accuracy(
    model: &dcmetric_core::model::MetricModel,
    vocab: &dcmetric_core::corpus::Vocabulary,
    corpus: &[MultiLevelExample],
) -> Result<f64> {
    use dcmetric_core::corpus::{encode_pair, SimpleTokenizer};
    let mut correct = 0usize;
    for ex in corpus {
        let mut means = Vec::with_capacity(ex.num_levels());
        for level in &ex.levels {
            let mut sum = 0.0;
            for resp in level {
                let pair = encode_pair(
                    &ex.context,
                    resp,
                    vocab,
                    &SimpleTokenizer,
                    model.config.max_seq_len,
                )?;
                sum += model.forward_score(&pair)?;
            }
            means.push(sum / level.len() as f64);
        }
        if means.windows(2).all(|w| w[0] < w[1]) {
            correct += 1;
        }
    }
    Ok(correct as f64 / corpus.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape_and_determinism() {
        let a = gen_pretrain_corpus(5, 3, 5, 42).unwrap();
        let b = gen_pretrain_corpus(5, 3, 5, 42).unwrap();
        assert_eq!(a.len(), 5);
        for (ex_a, ex_b) in a.iter().zip(&b) {
            assert_eq!(ex_a.num_levels(), 3);
            assert!(ex_a.levels.iter().all(|l| l.len() == 5));
            for (la, lb) in ex_a.levels.iter().zip(&ex_b.levels) {
                for (ra, rb) in la.iter().zip(lb) {
                    assert_eq!(ra.text(), rb.text());
                }
            }
        }
    }

    #[test]
    fn responses_carry_their_level_marker() {
        let corpus = gen_pretrain_corpus(3, 3, 2, 7).unwrap();
        for ex in &corpus {
            for (j, level) in ex.levels.iter().enumerate() {
                for resp in level {
                    assert!(resp.text().contains(&format!("tone{}", j + 1)));
                }
            }
        }
    }

    #[test]
    fn scored_pairs_track_levels() {
        let pairs = gen_scored_pairs(30, 3, 0.0, 1.0, 5.0, 9).unwrap();
        for p in &pairs {
            if p.response.text().contains("tone1") {
                assert_eq!(p.human_score, 1.0);
            } else if p.response.text().contains("tone3") {
                assert_eq!(p.human_score, 5.0);
            }
        }
    }
}
