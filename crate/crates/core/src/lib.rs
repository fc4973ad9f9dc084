//! Faithfulness scoring and faithfulness-aware decoding for document-grounded
//! dialogue.
//!
//! The faithfulness score of a response `r` to a document `d` given a dialogue
//! history `h` is the conditional pointwise mutual information
//! `log P(r | d, h) - log P(r | h)`, computed with any backend that implements
//! [`lm::LanguageModel`]. The same quantity decomposes per token, which the
//! [`decoder`] uses to trade likelihood against faithfulness at every step.

pub mod calibration;
pub mod data;
pub mod decoder;
pub mod error;
pub mod evaluate;
pub mod example;
pub mod faith;
pub mod fsutil;
pub mod lexical;
pub mod lm;
pub mod records;
pub mod tokenizer;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
pub use example::{GroundedExample, Label, Speaker, Turn};
pub use faith::{pmi_faith, token_cpmi, FaithScore, FaithScorer, NormalizationBounds, PromptTemplate};
pub use calibration::{ClassificationReport, LabeledScore};
pub use decoder::{DecodeConfig, Hypothesis, Objective, Strategy};
pub use lm::{LanguageModel, LogProbVector, NGramLM, RemoteLM};
