//! Dialogue records, tokenization, vocabulary and pair encoding.
//!
//! A context-response pair is encoded in the layout
//! `[CLS] c_1 .. c_m [SEP] r_1 .. r_n [SEP]` followed by padding. When the
//! pair exceeds `max_seq_len`, context tokens are dropped from the front
//! (oldest first) before response tokens are dropped from the end, and the
//! response always keeps at least one token.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

/// The reserved tokens in id order.
pub const RESERVED_TOKENS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN];

/// One utterance; non-empty after whitespace trimming.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance(String);

impl Utterance {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("empty utterance".to_string()));
        }
        Ok(Utterance(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

/// One pre-training record: a context with `levels.len()` coherence levels
/// of candidate responses, level index ascending in coherence.
#[derive(Debug, Clone)]
pub struct MultiLevelExample {
    pub context: Vec<Utterance>,
    /// `levels[j]` holds the responses of coherence level `j + 1`.
    pub levels: Vec<Vec<Utterance>>,
}

impl MultiLevelExample {
    pub fn new(context: Vec<Utterance>, levels: Vec<Vec<Utterance>>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 coherence levels, got {}",
                levels.len()
            )));
        }
        for (j, level) in levels.iter().enumerate() {
            if level.is_empty() {
                return Err(Error::InvalidInput(format!("level {} has no responses", j + 1)));
            }
        }
        Ok(MultiLevelExample { context, levels })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// One fine-tuning / evaluation record with a human coherence score.
#[derive(Debug, Clone)]
pub struct ScoredPair {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub human_score: f64,
    /// `(human_score - score_min) / (score_max - score_min)`.
    pub normalized_score: f64,
}

impl ScoredPair {
    pub fn new(
        context: Vec<Utterance>,
        response: Utterance,
        human_score: f64,
        score_min: f64,
        score_max: f64,
    ) -> Result<Self> {
        if !(score_min < score_max) {
            return Err(Error::InvalidConfig(format!(
                "score bounds must satisfy min < max, got [{score_min}, {score_max}]"
            )));
        }
        if !human_score.is_finite() || human_score < score_min || human_score > score_max {
            return Err(Error::InvalidInput(format!(
                "score {human_score} outside [{score_min}, {score_max}]"
            )));
        }
        let normalized_score = (human_score - score_min) / (score_max - score_min);
        Ok(ScoredPair {
            context,
            response,
            human_score,
            normalized_score,
        })
    }
}

/// Pluggable text-to-token interface, so a subword tokenizer can be dropped
/// in behind the same encoding layout.
pub trait Tokenize {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Lower-cased splitting on whitespace, with every non-alphanumeric
/// character emitted as its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleTokenizer;

impl Tokenize for SimpleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut word = String::new();
        for ch in text.chars().flat_map(|c| c.to_lowercase()) {
            if ch.is_alphanumeric() {
                word.push(ch);
            } else {
                if !word.is_empty() {
                    tokens.push(core::mem::take(&mut word));
                }
                if !ch.is_whitespace() {
                    tokens.push(ch.to_string());
                }
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
        tokens
    }
}

/// Immutable token <-> id mapping with fixed reserved ids 0..=3.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from a pre-training corpus: all tokens with
    /// frequency >= `min_freq`, ids assigned by descending frequency then
    /// lexicographic order, after the four reserved ids.
    pub fn build(
        corpus: &[MultiLevelExample],
        tokenizer: &dyn Tokenize,
        min_freq: usize,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InvalidInput(
                "cannot build a vocabulary from an empty corpus".to_string(),
            ));
        }
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut count = |text: &str| {
            for tok in tokenizer.tokenize(text) {
                *freq.entry(tok).or_insert(0) += 1;
            }
        };
        for ex in corpus {
            for utt in &ex.context {
                count(utt.text());
            }
            for level in &ex.levels {
                for utt in level {
                    count(utt.text());
                }
            }
        }
        let mut pairs: Vec<(String, usize)> = freq
            .into_iter()
            .filter(|(_, c)| *c >= min_freq.max(1))
            .collect();
        pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(pairs.into_iter().map(|(t, _)| t))
    }

    /// Builds from regular tokens in id order (reserved tokens are
    /// prepended automatically). Duplicate or reserved-looking tokens are
    /// rejected.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|t| t.to_string()).collect();
        id_to_token.extend(tokens);
        let mut token_to_id = BTreeMap::new();
        for (id, tok) in id_to_token.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    /// Id for a token, falling back to `[UNK]`.
    pub fn lookup(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// All tokens in id order, reserved tokens first.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token.iter().map(String::as_str)
    }

    /// Maps ids back to token strings; inverse of [`Vocabulary::lookup`]
    /// over assigned ids.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .unwrap_or_else(|| UNK_TOKEN.to_string())
            })
            .collect()
    }
}

/// A tokenized context-response pair in `[CLS] c [SEP] r [SEP]` layout,
/// padded to the requested length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub token_ids: Vec<u32>,
    /// 0 through the first `[SEP]`, 1 afterwards.
    pub segment_ids: Vec<u8>,
    /// 1 for real tokens, 0 for padding.
    pub attention_mask: Vec<u8>,
    /// Number of real (non-pad) positions.
    pub length: usize,
}

/// Encodes a pair into the fixed layout, truncating per the module rules.
pub fn encode_pair(
    context: &[Utterance],
    response: &Utterance,
    vocab: &Vocabulary,
    tokenizer: &dyn Tokenize,
    max_seq_len: usize,
) -> Result<EncodedPair> {
    if max_seq_len < 8 {
        return Err(Error::InvalidConfig(format!(
            "max_seq_len must be at least 8, got {max_seq_len}"
        )));
    }
    // Multi-utterance contexts are joined with a single space before
    // tokenization.
    let mut joined = String::new();
    for (i, utt) in context.iter().enumerate() {
        if i > 0 {
            joined.push(' ');
        }
        joined.push_str(utt.text());
    }
    let ctx_tokens = tokenizer.tokenize(&joined);
    let resp_tokens = tokenizer.tokenize(response.text());

    let budget = max_seq_len - 3; // [CLS] + 2x [SEP]
    let (ctx_keep, resp_keep) = if ctx_tokens.len() + resp_tokens.len() <= budget {
        (ctx_tokens.len(), resp_tokens.len())
    } else {
        let ctx_keep = budget.saturating_sub(resp_tokens.len()).min(ctx_tokens.len());
        let resp_keep = (budget - ctx_keep).min(resp_tokens.len()).max(1);
        (ctx_keep, resp_keep)
    };

    let mut token_ids = Vec::with_capacity(max_seq_len);
    token_ids.push(CLS_ID);
    for tok in &ctx_tokens[ctx_tokens.len() - ctx_keep..] {
        token_ids.push(vocab.lookup(tok));
    }
    token_ids.push(SEP_ID);
    let first_sep = token_ids.len() - 1;
    for tok in &resp_tokens[..resp_keep] {
        token_ids.push(vocab.lookup(tok));
    }
    token_ids.push(SEP_ID);

    let length = token_ids.len();
    debug_assert!(length <= max_seq_len);
    let mut segment_ids = vec![0u8; max_seq_len];
    let mut attention_mask = vec![0u8; max_seq_len];
    for seg in segment_ids.iter_mut().skip(first_sep + 1) {
        *seg = 1;
    }
    for m in attention_mask.iter_mut().take(length) {
        *m = 1;
    }
    token_ids.resize(max_seq_len, PAD_ID);

    Ok(EncodedPair {
        token_ids,
        segment_ids,
        attention_mask,
        length,
    })
}
