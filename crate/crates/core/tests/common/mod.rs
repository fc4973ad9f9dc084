//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use pmi_faith::lm::{LanguageModel, LogProbVector};
use pmi_faith::tokenizer::{self, TokenId, Vocabulary};
use pmi_faith::{GroundedExample, NGramLM, Result, Turn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 12] = [
    "red", "blue", "cat", "dog", "runs", "sleeps", "on", "under", "the", "a", "mat", "hill",
];

/// A backend whose next-token distribution is a pseudo-random function of
/// the seed and the full context.
pub struct HashLM {
    pub vocab: Vocabulary,
    pub seed: u64,
    /// Logits are drawn uniformly from `[-spread, spread]`.
    pub spread: f64,
}

impl HashLM {
    pub fn new(words: &[&str], seed: u64, spread: f64) -> Self {
        Self {
            vocab: Vocabulary::from_words(words.iter().copied()).unwrap(),
            seed,
            spread,
        }
    }

    /// Log-softmax of the raw logits, computed here rather than by the library.
    pub fn reference_logprobs(&self, context: &[TokenId]) -> Vec<f64> {
        let mut h = DefaultHasher::new();
        self.seed.hash(&mut h);
        context.hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let logits: Vec<f64> = (0..self.vocab.len())
            .map(|_| rng.gen_range(-self.spread..=self.spread))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        logits.iter().map(|l| l - max - z.ln()).collect()
    }
}

impl LanguageModel for HashLM {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector> {
        LogProbVector::from_logprobs(self.reference_logprobs(context))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(tokenizer::tokenize(&self.vocab, text))
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        tokenizer::detokenize(&self.vocab, ids)
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sentence(rng: &mut impl Rng, words: &[&str], min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_example(rng: &mut impl Rng, id: usize, words: &[&str]) -> GroundedExample {
    let turns = rng.gen_range(0..=2);
    let history = (0..turns)
        .map(|i| {
            let text = sentence(rng, words, 1, 5);
            if i % 2 == 0 {
                Turn::user(text)
            } else {
                Turn::agent(text)
            }
        })
        .collect();
    GroundedExample::new(format!("ex-{id:04}"), sentence(rng, words, 3, 12))
        .with_history(history)
        .with_response(sentence(rng, words, 1, 6))
}

/// Trigram with add-k smoothing trained on random sentences, plus a few of
/// the prompt words so prompts are mostly in vocabulary.
pub fn random_trigram(rng: &mut impl Rng, cache_weight: f64) -> NGramLM {
    let mut corpus: Vec<String> = (0..rng.gen_range(5..30))
        .map(|_| sentence(rng, &WORDS, 2, 10))
        .collect();
    corpus.push("document : user : agent :".into());
    let vocab = tokenizer::build_vocab(&corpus, 1).unwrap();
    let add_k = rng.gen_range(0.01..1.0);
    let a = rng.gen_range(0.05..0.5);
    let b = rng.gen_range(0.05..0.45);
    NGramLM::train(&corpus, vocab, 3, add_k, vec![a, b, 1.0 - a - b])
        .unwrap()
        .with_cache_weight(cache_weight)
        .unwrap()
}
