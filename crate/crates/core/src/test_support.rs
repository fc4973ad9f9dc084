//! Hand-specified backends for unit tests.

use crate::error::Result;
use crate::lm::{LanguageModel, LogProbVector};
use crate::tokenizer::{self, TokenId, Vocabulary, EOS};

/// Returns one fixed distribution when the context contains the token
/// `document` and another otherwise. Unlisted tokens get the probability floor.
pub struct DocSwitchLM {
    vocab: Vocabulary,
    with_doc: Vec<f64>,
    without_doc: Vec<f64>,
    marker: TokenId,
}

impl DocSwitchLM {
    pub fn new(with_doc: &[(&str, f64)], without_doc: &[(&str, f64)], eos_prob: f64) -> Self {
        let mut words: Vec<&str> = vec!["document", ":", "agent", "user"];
        for (w, _) in with_doc.iter().chain(without_doc) {
            if !words.contains(w) {
                words.push(w);
            }
        }
        let vocab = Vocabulary::from_words(words).unwrap();
        let dist = |entries: &[(&str, f64)]| {
            let mut probs = vec![0.0; vocab.len()];
            for (w, p) in entries {
                probs[vocab.id(w).unwrap() as usize] = *p;
            }
            probs[EOS as usize] = eos_prob;
            probs
        };
        let with_doc = dist(with_doc);
        let without_doc = dist(without_doc);
        let marker = vocab.id("document").unwrap();
        Self {
            vocab,
            with_doc,
            without_doc,
            marker,
        }
    }

    pub fn id(&self, word: &str) -> TokenId {
        self.vocab.id(word).unwrap()
    }
}

impl LanguageModel for DocSwitchLM {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector> {
        let probs = if context.contains(&self.marker) {
            &self.with_doc
        } else {
            &self.without_doc
        };
        Ok(LogProbVector::from_probs(probs.clone()))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(tokenizer::tokenize(&self.vocab, text))
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        tokenizer::detokenize(&self.vocab, ids)
    }
}
