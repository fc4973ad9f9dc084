//! Interpolated add-k n-gram language model with an optional context cache.
//!
//! The k-gram estimate for order k is
//! `(count(ctx_{k-1}, v) + add_k) / (count(ctx_{k-1}) + add_k * |V|)` and the
//! model mixes orders 1..=n with weights `lambdas`. Contexts shorter than
//! `k - 1` are left-padded with BOS, which is how training frames each line.
//!
//! A plain n-gram only sees the last `n - 1` tokens, so it cannot tell a
//! prompt that contains a grounding document from one that does not. The
//! cache component mixes in token statistics of the whole context:
//!
//! `P(v | ctx) = (1 - cache_weight) * P_interp(v | ctx) + cache_weight * P_cache(v | ctx)`
//!
//! where `P_cache` averages a bigram cache (continuations of the last token
//! inside the context) with a unigram cache (token frequencies inside the
//! context). With `cache_weight = 0` the model is a pure n-gram.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LanguageModel, LogProbVector};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::tokenizer::{self, TokenId, Vocabulary, BOS, EOS};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLM {
    order: usize,
    vocab: Vocabulary,
    add_k: f64,
    lambdas: Vec<f64>,
    cache_weight: f64,
    counts: HashMap<Vec<TokenId>, ContextCounts>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    order: usize,
    add_k: f64,
    lambdas: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    cache_weight: f64,
    vocab_file: String,
    counts: BTreeMap<String, BTreeMap<String, u64>>,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn validate_hyperparameters(order: usize, add_k: f64, lambdas: &[f64]) -> Result<()> {
    if order < 1 {
        return Err(Error::InvalidConfig("order must be at least 1".into()));
    }
    if !add_k.is_finite() || add_k < 0.0 {
        return Err(Error::InvalidConfig(format!("add_k must be >= 0, got {add_k}")));
    }
    if lambdas.len() != order {
        return Err(Error::InvalidConfig(format!(
            "expected {order} interpolation weights, got {}",
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidConfig("interpolation weights must be >= 0".into()));
    }
    let sum: f64 = lambdas.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "interpolation weights must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

impl NGramLM {
    /// Counts every line of `corpus` framed as `BOS tokens.. EOS`. Blank lines
    /// are skipped.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        vocab: Vocabulary,
        order: usize,
        add_k: f64,
        lambdas: Vec<f64>,
    ) -> Result<Self> {
        validate_hyperparameters(order, add_k, &lambdas)?;
        let mut counts: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        for line in corpus {
            let line = line.as_ref();
            if line.trim().is_empty() {
                continue;
            }
            let mut ids = vec![BOS];
            ids.extend(tokenizer::tokenize(&vocab, line));
            ids.push(EOS);
            for i in 1..ids.len() {
                for k in 1..=order {
                    let ctx = padded_context(&ids[..i], k - 1);
                    let entry = counts.entry(ctx).or_default();
                    entry.total += 1;
                    *entry.next.entry(ids[i]).or_default() += 1;
                }
            }
        }
        Ok(Self {
            order,
            vocab,
            add_k,
            lambdas,
            cache_weight: 0.0,
            counts,
        })
    }

    /// A model with no counts. With `add_k > 0` it predicts the uniform distribution.
    pub fn untrained(vocab: Vocabulary, order: usize, add_k: f64, lambdas: Vec<f64>) -> Result<Self> {
        let empty: [&str; 0] = [];
        Self::train(&empty, vocab, order, add_k, lambdas)
    }

    pub fn with_cache_weight(mut self, cache_weight: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&cache_weight) {
            return Err(Error::InvalidConfig(format!(
                "cache weight must lie in [0, 1), got {cache_weight}"
            )));
        }
        self.cache_weight = cache_weight;
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn cache_weight(&self) -> f64 {
        self.cache_weight
    }

    /// Raw count of `next` after `context` (context given exactly, already padded).
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|c| c.next.get(&next).copied())
            .unwrap_or(0)
    }

    fn interpolated_probs(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let mut probs = vec![0.0; v];
        for (k, &lambda) in (1..=self.order).zip(&self.lambdas) {
            if lambda == 0.0 {
                continue;
            }
            let ctx = padded_context(context, k - 1);
            let (total, next) = match self.counts.get(&ctx) {
                Some(c) => (c.total as f64, Some(&c.next)),
                None => (0.0, None),
            };
            let denom = total + self.add_k * v as f64;
            if denom == 0.0 {
                // add_k = 0 on an unseen context: the add-k limit is uniform
                let share = lambda / v as f64;
                probs.iter_mut().for_each(|p| *p += share);
                continue;
            }
            let base = self.add_k / denom;
            match next {
                Some(next) => {
                    for (id, p) in probs.iter_mut().enumerate() {
                        let c = next.get(&(id as TokenId)).copied().unwrap_or(0) as f64;
                        *p += lambda * ((c + self.add_k) / denom);
                    }
                }
                None => probs.iter_mut().for_each(|p| *p += lambda * base),
            }
        }
        probs
    }

    fn cache_probs(&self, context: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let n = context.len() as f64;
        let mut unigram = vec![0.0; v];
        for &t in context {
            unigram[t as usize] += 1.0;
        }
        let last = *context.last().expect("cache needs a non-empty context");
        let mut bigram = vec![0.0; v];
        let mut last_count = 0.0;
        for pair in context.windows(2) {
            if pair[0] == last {
                bigram[pair[1] as usize] += 1.0;
                last_count += 1.0;
            }
        }
        if last_count > 0.0 {
            unigram
                .iter()
                .zip(&bigram)
                .map(|(u, b)| 0.5 * (b / last_count) + 0.5 * (u / n))
                .collect()
        } else {
            unigram.into_iter().map(|u| u / n).collect()
        }
    }

    fn check_context(&self, context: &[TokenId]) -> Result<()> {
        match context.iter().find(|&&t| t as usize >= self.vocab.len()) {
            Some(&bad) => Err(Error::UnknownTokenId(bad)),
            None => Ok(()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let vocab_name = vocab_file_name(path);
        let vocab_path = path.with_file_name(&vocab_name);
        fsutil::write_atomic(&vocab_path, self.vocab.to_file_contents().as_bytes())?;

        let mut counts = BTreeMap::new();
        for (ctx, c) in &self.counts {
            let key = ctx.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
            let next = c.next.iter().map(|(t, n)| (t.to_string(), *n)).collect();
            counts.insert(key, next);
        }
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            order: self.order,
            add_k: self.add_k,
            lambdas: self.lambdas.clone(),
            cache_weight: self.cache_weight,
            vocab_file: vocab_name,
            counts,
        };
        let mut json = serde_json::to_vec_pretty(&file)?;
        json.push(b'\n');
        fsutil::write_atomic(path, &json)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&fsutil::read_to_string(path)?)
            .map_err(|e| Error::InvalidModel(format!("{}: {e}", path.display())))?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        validate_hyperparameters(file.order, file.add_k, &file.lambdas)?;
        let vocab_path: PathBuf = match path.parent() {
            Some(dir) => dir.join(&file.vocab_file),
            None => PathBuf::from(&file.vocab_file),
        };
        let vocab = Vocabulary::load(&vocab_path)?;
        let v = vocab.len();
        let parse_id = |s: &str| -> Result<TokenId> {
            let id: TokenId = s
                .parse()
                .map_err(|_| Error::InvalidModel(format!("bad token id {s:?}")))?;
            if id as usize >= v {
                return Err(Error::InvalidModel(format!("token id {id} outside vocabulary")));
            }
            Ok(id)
        };
        let mut counts = HashMap::with_capacity(file.counts.len());
        for (key, next) in file.counts {
            let ctx = key
                .split_whitespace()
                .map(parse_id)
                .collect::<Result<Vec<_>>>()?;
            if ctx.len() >= file.order {
                return Err(Error::InvalidModel(format!(
                    "context {key:?} too long for order {}",
                    file.order
                )));
            }
            let mut entry = ContextCounts::default();
            for (tok, n) in next {
                if n == 0 {
                    return Err(Error::InvalidModel(format!("zero count in context {key:?}")));
                }
                entry.next.insert(parse_id(&tok)?, n);
                entry.total += n;
            }
            counts.insert(ctx, entry);
        }
        Self {
            order: file.order,
            vocab,
            add_k: file.add_k,
            lambdas: file.lambdas,
            cache_weight: 0.0,
            counts,
        }
        .with_cache_weight(file.cache_weight)
    }
}

fn vocab_file_name(model_path: &Path) -> String {
    let stem = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    format!("{stem}.vocab.txt")
}

/// Last `len` tokens of `history`, left-padded with BOS.
fn padded_context(history: &[TokenId], len: usize) -> Vec<TokenId> {
    let take = history.len().min(len);
    let mut ctx = vec![BOS; len - take];
    ctx.extend_from_slice(&history[history.len() - take..]);
    ctx
}

impl LanguageModel for NGramLM {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector> {
        self.check_context(context)?;
        let mut probs = self.interpolated_probs(context);
        if self.cache_weight > 0.0 && !context.is_empty() {
            let cache = self.cache_probs(context);
            let keep = 1.0 - self.cache_weight;
            for (p, c) in probs.iter_mut().zip(cache) {
                *p = keep * *p + self.cache_weight * c;
            }
        }
        Ok(LogProbVector::from_probs(probs))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        Ok(tokenizer::tokenize(&self.vocab, text))
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        tokenizer::detokenize(&self.vocab, ids)
    }
}
