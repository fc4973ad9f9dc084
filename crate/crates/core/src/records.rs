//! Line-oriented JSON output records. Every real number is written with six
//! decimal places.

use serde::ser::Error as _;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::decoder::{DecodeConfig, Hypothesis, Objective, Strategy};
use crate::error::Result;
use crate::faith::FaithScore;

/// Formats a float with six decimals; non-finite values become `null`.
pub fn format_fixed6(x: f64) -> Option<String> {
    if !x.is_finite() {
        return None;
    }
    let s = format!("{x:.6}");
    Some(if s == "-0.000000" { "0.000000".into() } else { s })
}

pub fn fixed6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    match format_fixed6(*x) {
        Some(text) => RawValue::from_string(text)
            .map_err(S::Error::custom)?
            .serialize(s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    #[serde(serialize_with = "fixed6")]
    pub raw: f64,
    #[serde(serialize_with = "fixed6")]
    pub normalized: f64,
    #[serde(serialize_with = "fixed6")]
    pub logprob_with_doc: f64,
    #[serde(serialize_with = "fixed6")]
    pub logprob_without_doc: f64,
}

impl ScoreRecord {
    pub fn new(id: impl Into<String>, score: &FaithScore) -> Self {
        Self {
            id: id.into(),
            raw: score.raw,
            normalized: score.normalized,
            logprob_with_doc: score.logprob_with_doc,
            logprob_without_doc: score.logprob_without_doc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub strategy: Strategy,
    pub objective: Objective,
    #[serde(serialize_with = "fixed6")]
    pub alpha: f64,
    #[serde(serialize_with = "fixed6")]
    pub top_p: f64,
    pub beam_width: usize,
    pub max_len: usize,
    pub min_len: usize,
}

impl From<&DecodeConfig> for ConfigRecord {
    fn from(c: &DecodeConfig) -> Self {
        Self {
            strategy: c.strategy,
            objective: c.objective,
            alpha: c.alpha,
            top_p: c.top_p,
            beam_width: c.beam_width,
            max_len: c.max_len,
            min_len: c.min_len,
        }
    }
}

impl From<&ConfigRecord> for DecodeConfig {
    fn from(c: &ConfigRecord) -> Self {
        Self {
            strategy: c.strategy,
            objective: c.objective,
            alpha: c.alpha,
            top_p: c.top_p,
            beam_width: c.beam_width,
            max_len: c.max_len,
            min_len: c.min_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub response: String,
    #[serde(serialize_with = "fixed6")]
    pub combined_score: f64,
    #[serde(serialize_with = "fixed6")]
    pub loglik: f64,
    pub num_tokens: usize,
    pub config: ConfigRecord,
}

impl DecodeRecord {
    pub fn new(id: impl Into<String>, response: String, hyp: &Hypothesis, config: &DecodeConfig) -> Self {
        Self {
            id: id.into(),
            response,
            combined_score: hyp.combined_score,
            loglik: hyp.loglik,
            num_tokens: hyp.tokens.len(),
            config: config.into(),
        }
    }
}

/// One JSON document per line, each terminated by a newline.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
