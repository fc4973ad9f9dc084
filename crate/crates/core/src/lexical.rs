//! Lexical overlap baselines: unigram F1, sentence BLEU-4 and ROUGE-L.
//!
//! All three operate on the tokenizer's normalized token strings. Unigram F1
//! drops punctuation tokens; BLEU and ROUGE-L keep them.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::tokenizer::{is_punctuation, normalize_tokens};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(serialize_with = "crate::records::fixed6")]
    pub unigram_f1: f64,
    /// On a 0..=100 scale.
    #[serde(serialize_with = "crate::records::fixed6")]
    pub bleu4: f64,
    #[serde(serialize_with = "crate::records::fixed6")]
    pub rouge_l: f64,
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn counts<T: Eq + Hash + Clone>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut map = HashMap::new();
    for item in items {
        *map.entry(item).or_insert(0) += 1;
    }
    map
}

fn clipped_overlap<T: Eq + Hash>(cand: &HashMap<T, usize>, reference: &HashMap<T, usize>) -> usize {
    cand.iter()
        .map(|(k, c)| (*c).min(reference.get(k).copied().unwrap_or(0)))
        .sum()
}

pub fn unigram_f1_tokens<T: AsRef<str>>(cand: &[T], reference: &[T]) -> f64 {
    let keep = |toks: &[T]| -> Vec<String> {
        toks.iter()
            .map(|t| t.as_ref())
            .filter(|t| !is_punctuation(t))
            .map(str::to_string)
            .collect()
    };
    let cand = keep(cand);
    let reference = keep(reference);
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let overlap = clipped_overlap(&counts(cand.iter().cloned()), &counts(reference.iter().cloned()));
    if overlap == 0 {
        return 0.0;
    }
    f1(
        overlap as f64 / cand.len() as f64,
        overlap as f64 / reference.len() as f64,
    )
}

pub fn unigram_f1(candidate: &str, reference: &str) -> f64 {
    unigram_f1_tokens(&normalize_tokens(candidate), &normalize_tokens(reference))
}

pub fn bleu4_tokens<T: AsRef<str>>(cand: &[T], reference: &[T]) -> f64 {
    let cand: Vec<&str> = cand.iter().map(|t| t.as_ref()).collect();
    let reference: Vec<&str> = reference.iter().map(|t| t.as_ref()).collect();
    if cand.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=4 {
        if cand.len() < n {
            continue;
        }
        let total = cand.len() - n + 1;
        let cand_ngrams = counts(cand.windows(n));
        let ref_ngrams = counts(reference.windows(n));
        let matches = clipped_overlap(&cand_ngrams, &ref_ngrams);
        let precision = if matches == 0 {
            0.1 / total as f64
        } else {
            matches as f64 / total as f64
        };
        log_sum += precision.ln();
        orders += 1;
    }
    let brevity = (1.0 - reference.len() as f64 / cand.len() as f64).exp().min(1.0);
    100.0 * brevity * (log_sum / orders as f64).exp()
}

/// Sentence BLEU-4 on a 0..=100 scale. Orders longer than the candidate are
/// left out of the geometric mean; orders with no match use `0.1 / total`.
pub fn bleu4(candidate: &str, reference: &str) -> f64 {
    bleu4_tokens(&normalize_tokens(candidate), &normalize_tokens(reference))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens<T: AsRef<str>>(cand: &[T], reference: &[T]) -> f64 {
    let cand: Vec<&str> = cand.iter().map(|t| t.as_ref()).collect();
    let reference: Vec<&str> = reference.iter().map(|t| t.as_ref()).collect();
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&cand, &reference);
    if l == 0 {
        return 0.0;
    }
    f1(l as f64 / cand.len() as f64, l as f64 / reference.len() as f64)
}

pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    rouge_l_tokens(&normalize_tokens(candidate), &normalize_tokens(reference))
}

/// Unigram F1 against the document; BLEU-4 and ROUGE-L against the gold response.
pub fn metric_report(candidate: &str, document: &str, gold: &str) -> MetricReport {
    let cand = normalize_tokens(candidate);
    let gold = normalize_tokens(gold);
    MetricReport {
        unigram_f1: unigram_f1_tokens(&cand, &normalize_tokens(document)),
        bleu4: bleu4_tokens(&cand, &gold),
        rouge_l: rouge_l_tokens(&cand, &gold),
    }
}
