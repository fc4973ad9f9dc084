//! Corpus-level scoring, decoding and evaluation of generated responses.
//! Per-example work runs on the current rayon pool; results keep input order.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::LabeledScore;
use crate::decoder::{DecodeConfig, Decoder, Hypothesis};
use crate::error::{Error, Result};
use crate::example::GroundedExample;
use crate::faith::{FaithScore, FaithScorer, PromptTemplate};
use crate::lexical::{self, MetricReport};
use crate::lm::LanguageModel;
use crate::records::fixed6;

pub fn score_examples<L: LanguageModel + ?Sized>(
    lm: &L,
    examples: &[GroundedExample],
    scorer: &FaithScorer,
) -> Result<Vec<FaithScore>> {
    examples.par_iter().map(|ex| scorer.score(lm, ex)).collect()
}

pub fn decode_examples<L: LanguageModel + ?Sized>(
    lm: &L,
    examples: &[GroundedExample],
    config: &DecodeConfig,
    template: &PromptTemplate,
) -> Result<Vec<(Hypothesis, String)>> {
    examples
        .par_iter()
        .map(|ex| {
            let hyp = Decoder::new(lm, ex, *config, template)?.decode()?;
            let text = lm.detokenize(&hyp.tokens)?;
            Ok((hyp, text))
        })
        .collect()
}

/// Pairs scores with binarized labels. Examples without a label are an error.
pub fn labeled_scores(examples: &[GroundedExample], scores: &[f64]) -> Result<Vec<LabeledScore>> {
    examples
        .iter()
        .zip(scores)
        .map(|(ex, &score)| {
            let label = ex.label.ok_or_else(|| {
                Error::InvalidConfig(format!("example {} has no label", ex.id))
            })?;
            Ok(LabeledScore {
                id: ex.id.clone(),
                score,
                positive: label.is_positive(),
                dataset_tag: ex.dataset_tag.clone(),
            })
        })
        .collect()
}

/// Unigram F1 between each example's response and its document.
pub fn unigram_f1_scores(examples: &[GroundedExample]) -> Vec<f64> {
    examples
        .iter()
        .map(|ex| lexical::unigram_f1(ex.response.as_deref().unwrap_or(""), &ex.document))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    /// Normalized faithfulness score of the generated response.
    #[serde(serialize_with = "fixed6")]
    pub pmi_faith: f64,
    #[serde(serialize_with = "fixed6")]
    pub pmi_faith_raw: f64,
    #[serde(flatten)]
    pub lexical: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeans {
    #[serde(serialize_with = "fixed6")]
    pub pmi_faith: f64,
    #[serde(serialize_with = "fixed6")]
    pub unigram_f1: f64,
    /// Mean of sentence BLEU.
    #[serde(serialize_with = "fixed6")]
    pub bleu4: f64,
    #[serde(serialize_with = "fixed6")]
    pub rouge_l: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub mean: Option<EvalMeans>,
}

/// Faithfulness (normalized score and unigram F1 against the document) and
/// relevance (BLEU-4 and ROUGE-L against the gold response) of generated
/// responses.
pub fn evaluate_decodes<L: LanguageModel + ?Sized>(
    examples: &[GroundedExample],
    generated: &HashMap<String, String>,
    lm: &L,
    scorer: &FaithScorer,
    allow_empty: bool,
) -> Result<EvalTable> {
    if examples.is_empty() && !allow_empty {
        return Err(Error::NoExamples);
    }
    let missing: Vec<String> = examples
        .iter()
        .filter(|ex| !generated.contains_key(&ex.id))
        .map(|ex| ex.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGenerations(missing));
    }
    let rows: Vec<EvalRow> = examples
        .par_iter()
        .map(|ex| {
            let text = &generated[&ex.id];
            let gold = ex.response.as_deref().unwrap_or("");
            let lexical = lexical::metric_report(text, &ex.document, gold);
            let (norm, raw) = match scorer.score_response(lm, ex, text) {
                Ok(s) => (s.normalized, s.raw),
                // an empty generation carries no evidence of grounding
                Err(Error::EmptyResponse) => (0.0, f64::NAN),
                Err(e) => return Err(e),
            };
            Ok(EvalRow {
                id: ex.id.clone(),
                pmi_faith: norm,
                pmi_faith_raw: raw,
                lexical,
            })
        })
        .collect::<Result<_>>()?;
    let mean = (!rows.is_empty()).then(|| {
        let n = rows.len() as f64;
        let avg = |f: &dyn Fn(&EvalRow) -> f64| rows.iter().map(f).fold(0.0, |a, b| a + b) / n;
        EvalMeans {
            pmi_faith: avg(&|r| r.pmi_faith),
            unigram_f1: avg(&|r| r.lexical.unigram_f1),
            bleu4: avg(&|r| r.lexical.bleu4),
            rouge_l: avg(&|r| r.lexical.rouge_l),
            count: rows.len(),
        }
    });
    Ok(EvalTable { rows, mean })
}
