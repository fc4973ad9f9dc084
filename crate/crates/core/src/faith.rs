//! Faithfulness of a response to its grounding document, measured as the
//! conditional PMI between response and document given the dialogue history:
//!
//! `raw = log P(r | d, h) - log P(r | h)`
//!
//! Both conditionals come from the same backend; they differ only in whether
//! the document block is rendered into the prompt. The scored response is
//! terminated with EOS so that its length is modeled in both terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::example::GroundedExample;
use crate::lm::{per_token_logprobs, LanguageModel};
use crate::tokenizer::TokenId;

/// How a document and history are serialized into model input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub document_prefix: String,
    /// Uses `{speaker}` and `{text}` placeholders.
    pub turn_format: String,
    pub response_cue: String,
    pub separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            document_prefix: "document: ".into(),
            turn_format: "{speaker}: {text}".into(),
            response_cue: "agent:".into(),
            separator: "\n".into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.separator.is_empty() {
            return Err(Error::InvalidConfig("template separator must not be empty".into()));
        }
        for (name, field) in [
            ("document_prefix", &self.document_prefix),
            ("turn_format", &self.turn_format),
            ("response_cue", &self.response_cue),
        ] {
            if field.contains(&self.separator) {
                return Err(Error::InvalidConfig(format!(
                    "template {name} must not contain the separator"
                )));
            }
        }
        Ok(())
    }

    fn render_turn(&self, speaker: &str, text: &str) -> String {
        let mut out = String::with_capacity(self.turn_format.len() + text.len());
        let mut rest = self.turn_format.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix("{speaker}") {
                out.push_str(speaker);
                rest = after;
            } else if let Some(after) = tail.strip_prefix("{text}") {
                out.push_str(text);
                rest = after;
            } else {
                out.push('{');
                rest = &tail[1..];
            }
        }
        out.push_str(rest);
        out
    }

    /// Renders the optional document block, each history turn and the
    /// response cue, joined by the separator.
    pub fn render(&self, example: &GroundedExample, include_document: bool) -> String {
        let mut parts = Vec::with_capacity(example.history.len() + 2);
        if include_document {
            parts.push(format!("{}{}", self.document_prefix, example.document));
        }
        for turn in &example.history {
            parts.push(self.render_turn(&turn.speaker.to_string(), &turn.text));
        }
        parts.push(self.response_cue.clone());
        parts.join(&self.separator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub min: f64,
    pub max: f64,
}

impl NormalizationBounds {
    /// Raw-score range, in nats, of a reference human-annotated dev set.
    pub const DEFAULT: NormalizationBounds = NormalizationBounds { min: -2.1, max: 6.4 };

    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || max <= min {
            return Err(Error::DegenerateBounds { min, max });
        }
        Ok(Self { min, max })
    }

    /// Min and max of observed raw scores.
    pub fn from_scores(raw: &[f64]) -> Result<Self> {
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(min, max)
    }
}

impl Default for NormalizationBounds {
    fn default() -> Self {
        Self::DEFAULT
    }
}

pub fn normalize_score(raw: f64, bounds: NormalizationBounds) -> Result<f64> {
    let NormalizationBounds { min, max } = NormalizationBounds::new(bounds.min, bounds.max)?;
    Ok(((raw - min) / (max - min)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaithScore {
    pub raw: f64,
    pub normalized: f64,
    pub logprob_with_doc: f64,
    pub logprob_without_doc: f64,
}

/// Tokenized prompts for the two conditionals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub with_doc: Vec<TokenId>,
    pub without_doc: Vec<TokenId>,
}

impl PromptPair {
    pub fn build<L: LanguageModel + ?Sized>(
        lm: &L,
        example: &GroundedExample,
        template: &PromptTemplate,
    ) -> Result<Self> {
        Ok(Self {
            with_doc: build_prompt(lm, example, template, true)?,
            without_doc: build_prompt(lm, example, template, false)?,
        })
    }

    pub fn extend(&self, partial: &[TokenId]) -> (Vec<TokenId>, Vec<TokenId>) {
        let mut with_doc = self.with_doc.clone();
        with_doc.extend_from_slice(partial);
        let mut without_doc = self.without_doc.clone();
        without_doc.extend_from_slice(partial);
        (with_doc, without_doc)
    }
}

pub fn build_prompt<L: LanguageModel + ?Sized>(
    lm: &L,
    example: &GroundedExample,
    template: &PromptTemplate,
    include_document: bool,
) -> Result<Vec<TokenId>> {
    lm.tokenize(&template.render(example, include_document))
}

/// Tokenizes a response and appends the backend's EOS id.
pub fn response_ids<L: LanguageModel + ?Sized>(lm: &L, response: &str) -> Result<Vec<TokenId>> {
    let mut ids = lm.tokenize(response)?;
    if ids.is_empty() {
        return Err(Error::EmptyResponse);
    }
    ids.push(lm.eos_id());
    Ok(ids)
}

#[derive(Debug, Clone, Default)]
pub struct FaithScorer {
    pub template: PromptTemplate,
    pub bounds: NormalizationBounds,
    /// Divide both log-probabilities by the number of scored tokens.
    pub per_token_mean: bool,
}

impl FaithScorer {
    pub fn new(template: PromptTemplate, bounds: NormalizationBounds) -> Self {
        Self {
            template,
            bounds,
            per_token_mean: false,
        }
    }

    pub fn score<L: LanguageModel + ?Sized>(&self, lm: &L, example: &GroundedExample) -> Result<FaithScore> {
        let response = example.response.as_deref().ok_or(Error::EmptyResponse)?;
        self.score_response(lm, example, response)
    }

    /// Scores `response` against the example's document and history, ignoring
    /// any response stored on the example.
    pub fn score_response<L: LanguageModel + ?Sized>(
        &self,
        lm: &L,
        example: &GroundedExample,
        response: &str,
    ) -> Result<FaithScore> {
        let target = response_ids(lm, response)?;
        let prompts = PromptPair::build(lm, example, &self.template)?;
        let sum = |terms: Vec<f64>| terms.into_iter().fold(0.0, |acc, x| acc + x);
        let mut with_doc = sum(per_token_logprobs(lm, &prompts.with_doc, &target)?);
        let mut without_doc = sum(per_token_logprobs(lm, &prompts.without_doc, &target)?);
        if self.per_token_mean {
            let n = target.len() as f64;
            with_doc /= n;
            without_doc /= n;
        }
        let raw = with_doc - without_doc;
        Ok(FaithScore {
            raw,
            normalized: normalize_score(raw, self.bounds)?,
            logprob_with_doc: with_doc,
            logprob_without_doc: without_doc,
        })
    }
}

pub fn pmi_faith<L: LanguageModel + ?Sized>(
    lm: &L,
    example: &GroundedExample,
    template: &PromptTemplate,
    bounds: NormalizationBounds,
) -> Result<FaithScore> {
    FaithScorer::new(template.clone(), bounds).score(lm, example)
}

/// Token-level CPMI of `candidate` after `partial_response`:
/// `log P(v | d, h, r<t) - log P(v | h, r<t)`.
pub fn token_cpmi<L: LanguageModel + ?Sized>(
    lm: &L,
    candidate: TokenId,
    example: &GroundedExample,
    partial_response: &[TokenId],
    template: &PromptTemplate,
) -> Result<f64> {
    let prompts = PromptPair::build(lm, example, template)?;
    let (with_doc, without_doc) = prompts.extend(partial_response);
    let lp_with = lm.next_logprobs(&with_doc)?;
    let lp_without = lm.next_logprobs(&without_doc)?;
    if candidate as usize >= lp_with.len() {
        return Err(Error::UnknownTokenId(candidate));
    }
    Ok(lp_with.get(candidate) - lp_without.get(candidate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example::Turn;
    use crate::lm::NGramLM;
    use crate::test_support::DocSwitchLM;
    use crate::tokenizer::{self, EOS};

    fn ngram_lm() -> NGramLM {
        let corpus = ["the cat sat on the mat .", "a dog ran in the park ."];
        let vocab = tokenizer::build_vocab(&corpus, 1).unwrap();
        NGramLM::train(&corpus, vocab, 3, 0.1, vec![0.2, 0.3, 0.5])
            .unwrap()
            .with_cache_weight(0.3)
            .unwrap()
    }

    #[test]
    fn prompt_with_empty_history_is_only_the_cue() {
        let lm = ngram_lm();
        let ex = GroundedExample::new("1", "the cat sat");
        let t = PromptTemplate::default();
        assert_eq!(t.render(&ex, false), "agent:");
        assert_eq!(build_prompt(&lm, &ex, &t, false).unwrap(), lm.tokenize("agent:").unwrap());
    }

    #[test]
    fn prompt_renders_turns_and_document_line() {
        let t = PromptTemplate::default();
        let ex = GroundedExample::new("1", "d0").with_history(vec![Turn::user("hi")]);
        assert_eq!(t.render(&ex, false), "user: hi\nagent:");
        let with_doc = t.render(&ex, true);
        assert_eq!(with_doc.lines().next().unwrap(), "document: d0");
        assert_eq!(with_doc, "document: d0\nuser: hi\nagent:");
    }

    #[test]
    fn turn_format_placeholders_are_substituted_once() {
        let t = PromptTemplate {
            turn_format: "[{speaker}] {text} {x}".into(),
            ..Default::default()
        };
        let ex = GroundedExample::new("1", "d").with_history(vec![Turn::agent("say {speaker}")]);
        assert_eq!(t.render(&ex, false), "[agent] say {speaker} {x}\nagent:");
    }

    #[test]
    fn template_rejects_separator_inside_fields() {
        let t = PromptTemplate {
            response_cue: "agent:\n".into(),
            ..Default::default()
        };
        assert!(t.validate().is_err());
        assert!(PromptTemplate::default().validate().is_ok());
    }

    #[test]
    fn document_blind_backend_scores_zero() {
        let corpus = ["the cat sat on the mat ."];
        let vocab = tokenizer::build_vocab(&corpus, 1).unwrap();
        let lm = NGramLM::train(&corpus, vocab, 1, 1.0, vec![1.0]).unwrap();
        let ex = GroundedExample::new("1", "the cat sat")
            .with_history(vec![Turn::user("where ?")])
            .with_response("on the mat");
        let s = pmi_faith(&lm, &ex, &PromptTemplate::default(), NormalizationBounds::DEFAULT).unwrap();
        assert_eq!(s.raw, 0.0);
        assert_eq!(s.logprob_with_doc, s.logprob_without_doc);
    }

    #[test]
    fn table_backend_gives_log_ratio() {
        let lm = DocSwitchLM::new(&[("x", 0.4), ("y", 0.2)], &[("x", 0.1), ("y", 0.5)], 0.3);
        let x = lm.id("x");
        let ex = GroundedExample::new("1", "doc").with_response("x");
        let t = PromptTemplate::default();
        let s = pmi_faith(&lm, &ex, &t, NormalizationBounds::DEFAULT).unwrap();
        assert!((s.raw - 4.0f64.ln()).abs() < 1e-9);
        assert!((s.raw - 1.3863).abs() < 1e-4);
        let cpmi = token_cpmi(&lm, x, &ex, &[], &t).unwrap();
        assert!((cpmi - 1.3863).abs() < 1e-4);
        // EOS has equal mass in both conditionals
        assert!(token_cpmi(&lm, EOS, &ex, &[x], &t).unwrap().abs() < 1e-9);
    }

    #[test]
    fn raw_equals_sum_of_token_cpmi() {
        let lm = ngram_lm();
        let t = PromptTemplate::default();
        let ex = GroundedExample::new("1", "the cat sat on the mat .")
            .with_history(vec![Turn::user("where is the cat ?")])
            .with_response("the cat sat on the mat");
        let s = pmi_faith(&lm, &ex, &t, NormalizationBounds::DEFAULT).unwrap();
        let ids = response_ids(&lm, ex.response.as_deref().unwrap()).unwrap();
        let mut total = 0.0;
        for i in 0..ids.len() {
            total += token_cpmi(&lm, ids[i], &ex, &ids[..i], &t).unwrap();
        }
        assert!((s.raw - total).abs() <= 1e-9, "{} vs {}", s.raw, total);
        assert!(s.raw > 0.0);
    }

    #[test]
    fn empty_response_is_an_error() {
        let lm = ngram_lm();
        let ex = GroundedExample::new("1", "d").with_response("   ");
        let r = pmi_faith(&lm, &ex, &PromptTemplate::default(), NormalizationBounds::DEFAULT);
        assert!(matches!(r, Err(Error::EmptyResponse)));
    }

    #[test]
    fn normalization_uses_default_bounds() {
        let b = NormalizationBounds::DEFAULT;
        assert_eq!(normalize_score(6.4, b).unwrap(), 1.0);
        assert_eq!(normalize_score(-2.1, b).unwrap(), 0.0);
        assert_eq!(normalize_score(-5.0, b).unwrap(), 0.0);
        assert_eq!(normalize_score(100.0, b).unwrap(), 1.0);
        assert!((normalize_score(2.15, b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_bounds_are_rejected() {
        let b = NormalizationBounds { min: 1.0, max: 1.0 };
        assert!(matches!(normalize_score(0.0, b), Err(Error::DegenerateBounds { .. })));
        assert!(NormalizationBounds::new(2.0, 1.0).is_err());
    }

    #[test]
    fn per_token_mean_divides_by_scored_length() {
        let lm = ngram_lm();
        let ex = GroundedExample::new("1", "the cat sat on the mat .").with_response("the cat sat");
        let plain = FaithScorer::default().score(&lm, &ex).unwrap();
        let mean = FaithScorer {
            per_token_mean: true,
            ..Default::default()
        }
        .score(&lm, &ex)
        .unwrap();
        // "the cat sat" + EOS
        assert!((mean.raw - plain.raw / 4.0).abs() < 1e-12);
    }
}
