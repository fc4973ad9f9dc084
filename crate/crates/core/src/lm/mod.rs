//! Language-model backends exposing next-token distributions over a fixed
//! vocabulary. All values are natural logarithms.

use crate::error::{Error, Result};
use crate::tokenizer::{TokenId, EOS};

pub mod ngram;
pub mod protocol;
pub mod remote;
pub mod stub;

pub use ngram::NGramLM;
pub use remote::RemoteLM;
pub use stub::{StubOptions, StubServer};

/// Smallest probability any entry may carry.
pub const PROB_FLOOR: f64 = 1e-12;

/// Normalized next-token log-probabilities, one entry per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbVector {
    values: Vec<f64>,
}

impl LogProbVector {
    /// Floors every probability at [`PROB_FLOOR`] and renormalizes.
    pub fn from_probs(mut probs: Vec<f64>) -> Self {
        for p in probs.iter_mut() {
            if p.is_nan() || *p < PROB_FLOOR {
                *p = PROB_FLOOR;
            }
        }
        let total: f64 = probs.iter().sum();
        let values = probs.into_iter().map(|p| (p / total).ln()).collect();
        Self { values }
    }

    /// Accepts an already-normalized vector, rejecting non-finite entries or
    /// mass that does not sum to one within 1e-6.
    pub fn from_logprobs(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Protocol("empty logprob vector".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Protocol(format!("non-finite logprob {bad}")));
        }
        let lse = logsumexp(&values);
        if lse.abs() > 1e-6 {
            return Err(Error::Protocol(format!(
                "logprobs not normalized (logsumexp = {lse})"
            )));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, id: TokenId) -> f64 {
        self.values[id as usize]
    }

    /// Highest-probability id, ties to the smallest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best as TokenId
    }
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// A source of conditional next-token distributions plus the tokenizer that
/// goes with it.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, ids: &[TokenId]) -> Result<String>;

    fn eos_id(&self) -> TokenId {
        EOS
    }
}

impl<L: LanguageModel + ?Sized> LanguageModel for Box<L> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVector> {
        (**self).next_logprobs(context)
    }
    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        (**self).detokenize(ids)
    }
    fn eos_id(&self) -> TokenId {
        (**self).eos_id()
    }
}

/// Sum of per-token log-probabilities of `continuation` after `context`,
/// accumulated left to right.
pub fn sequence_logprob<L: LanguageModel + ?Sized>(
    lm: &L,
    context: &[TokenId],
    continuation: &[TokenId],
) -> Result<f64> {
    Ok(per_token_logprobs(lm, context, continuation)?
        .into_iter()
        .fold(0.0, |acc, lp| acc + lp))
}

/// The individual terms summed by [`sequence_logprob`].
pub fn per_token_logprobs<L: LanguageModel + ?Sized>(
    lm: &L,
    context: &[TokenId],
    continuation: &[TokenId],
) -> Result<Vec<f64>> {
    let mut ctx = Vec::with_capacity(context.len() + continuation.len());
    ctx.extend_from_slice(context);
    let mut out = Vec::with_capacity(continuation.len());
    for &tok in continuation {
        let dist = lm.next_logprobs(&ctx)?;
        if tok as usize >= dist.len() {
            return Err(Error::UnknownTokenId(tok));
        }
        out.push(dist.get(tok));
        ctx.push(tok);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_keeps_every_entry_finite_and_normalized() {
        let v = LogProbVector::from_probs(vec![0.0, 0.5, 0.5, 0.0]);
        assert!(v.values().iter().all(|x| x.is_finite()));
        assert!(logsumexp(v.values()).abs() < 1e-12);
        assert!((v.get(0) - PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn from_logprobs_rejects_unnormalized() {
        assert!(LogProbVector::from_logprobs(vec![0.0, 0.0]).is_err());
        assert!(LogProbVector::from_logprobs(vec![f64::NEG_INFINITY, 0.0]).is_err());
        assert!(LogProbVector::from_logprobs(vec![0.5f64.ln(), 0.5f64.ln()]).is_ok());
    }

    #[test]
    fn argmax_breaks_ties_toward_smaller_id() {
        let v = LogProbVector::from_probs(vec![0.1, 0.4, 0.4, 0.1]);
        assert_eq!(v.argmax(), 1);
    }
}
