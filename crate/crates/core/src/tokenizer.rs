//! Deterministic word-level tokenizer shared by the n-gram backend, the
//! lexical metrics and data ingestion.
//!
//! Normalization is NFC followed by lowercasing. Text is split on Unicode
//! whitespace and every piece is further split so that runs of
//! non-alphanumeric characters become tokens of their own.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

const RESERVED: [&str; 4] = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Returns true for ids that never appear in tokenized text except UNK.
pub fn is_reserved(id: TokenId) -> bool {
    id <= UNK
}

/// Ordered token inventory with the four reserved ids at 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from the reserved tokens plus `words` in the given order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() {
            return Err(Error::InvalidVocab(format!(
                "expected at least {} tokens, got {}",
                RESERVED.len(),
                tokens.len()
            )));
        }
        for (id, want) in RESERVED.iter().enumerate() {
            if tokens[id] != *want {
                return Err(Error::InvalidVocab(format!(
                    "id {id} must be {want:?}, found {:?}",
                    tokens[id]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocab(format!("malformed token {tok:?}")));
            }
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: a vocabulary holds at least the reserved tokens.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    /// One token per line; line number equals id.
    pub fn to_file_contents(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }
}

/// Splits normalized text into token strings without mapping to ids.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase().nfc().collect();
    let mut out = Vec::new();
    for piece in normalized.split_whitespace() {
        if piece == UNK_TOKEN {
            out.push(piece.to_string());
            continue;
        }
        let mut current = String::new();
        let mut current_is_punct = false;
        for c in piece.chars() {
            let punct = !c.is_alphanumeric();
            if !current.is_empty() && punct != current_is_punct {
                out.push(std::mem::take(&mut current));
            }
            current_is_punct = punct;
            current.push(c);
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

/// True when a normalized token is made of punctuation characters only.
pub fn is_punctuation(token: &str) -> bool {
    token != UNK_TOKEN && token.chars().all(|c| !c.is_alphanumeric())
}

pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidConfig("min_count must be at least 1".into()));
    }
    if corpus.iter().all(|line| line.as_ref().trim().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in corpus {
        for tok in normalize_tokens(line.as_ref()) {
            if RESERVED.contains(&tok.as_str()) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(entries.into_iter().map(|(t, _)| t))
}

pub fn tokenize(vocab: &Vocabulary, text: &str) -> Vec<TokenId> {
    normalize_tokens(text)
        .iter()
        .map(|t| vocab.id(t).filter(|id| !is_reserved(*id)).unwrap_or(UNK))
        .collect()
}

/// Joins token strings with single spaces. PAD, BOS and EOS are dropped;
/// UNK renders as `<unk>`, which `tokenize` maps back to UNK.
pub fn detokenize(vocab: &Vocabulary, ids: &[TokenId]) -> Result<String> {
    let mut words = Vec::with_capacity(ids.len());
    for &id in ids {
        let tok = vocab.token(id).ok_or(Error::UnknownTokenId(id))?;
        if matches!(id, PAD | BOS | EOS) {
            continue;
        }
        words.push(tok);
    }
    Ok(words.join(" "))
}
