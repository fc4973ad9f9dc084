//! JSONL ingestion and the synthetic grounded-dialogue corpus.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::example::{GroundedExample, Label, Turn};
use crate::fsutil;
use crate::records::to_jsonl;

/// Parses one JSON object per non-blank line. Errors carry the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: if e.is_eof() || e.is_syntax() {
                format!("parse failure: {e}")
            } else {
                format!("invalid record: {e}")
            },
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    parse_jsonl(&fsutil::read_to_string(path)?)
}

pub fn parse_examples(text: &str) -> Result<Vec<GroundedExample>> {
    parse_jsonl(text)
}

pub fn read_examples(path: &Path) -> Result<Vec<GroundedExample>> {
    read_jsonl(path)
}

pub fn write_examples(path: &Path, examples: &[GroundedExample]) -> Result<()> {
    fsutil::write_atomic(path, to_jsonl(examples)?.as_bytes())
}

/// Training text, one document per line.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    Ok(fsutil::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

const WORDS: [&str; 40] = [
    "river", "stone", "garden", "market", "lantern", "harbor", "meadow", "forest", "castle", "bridge",
    "copper", "silver", "amber", "violet", "crimson", "golden", "quiet", "ancient", "narrow", "bright",
    "sails", "grows", "carries", "guards", "holds", "opens", "shines", "follows", "builds", "reaches",
    "north", "south", "under", "beside", "across", "near", "every", "many", "old", "small",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub training_lines: Vec<String>,
    pub dev: Vec<GroundedExample>,
    pub test: Vec<GroundedExample>,
}

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(6..=9);
    let mut words: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
    words.push(".");
    words.join(" ")
}

/// Deterministic pseudo-documents split by document into train, dev and
/// test. For every sentence of a dev or test document there is one positive
/// example (the sentence itself) and one negative example (a sentence of a
/// different document), both sharing the same history.
pub fn make_synthetic_corpus(seed: u64, n_docs: usize, sentences_per_doc: usize) -> Result<SyntheticCorpus> {
    if n_docs < 2 {
        return Err(Error::InvalidConfig("synthetic corpus needs at least 2 documents".into()));
    }
    if sentences_per_doc < 1 {
        return Err(Error::InvalidConfig("sentences_per_doc must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let docs: Vec<Vec<String>> = (0..n_docs)
        .map(|_| (0..sentences_per_doc).map(|_| sentence(&mut rng)).collect())
        .collect();

    let n_eval = (n_docs / 5).max(1);
    let n_test = n_eval.min(n_docs - 1);
    let n_dev = n_eval.min(n_docs - n_test);
    let n_train = n_docs - n_dev - n_test;

    let training_lines = docs[..n_train].iter().map(|d| d.join(" ")).collect();
    let mut split = |name: &str, range: std::ops::Range<usize>| -> Vec<GroundedExample> {
        let mut out = Vec::new();
        for d in range {
            let document = docs[d].join(" ");
            for (s, positive) in docs[d].iter().enumerate() {
                let topic = positive.split(' ').next().unwrap_or("it");
                let history = vec![Turn::user(format!("tell me about the {topic} ."))];
                let other = loop {
                    let o = rng.gen_range(0..n_docs);
                    if o != d {
                        break o;
                    }
                };
                let negative = docs[other].choose(&mut rng).expect("non-empty").clone();
                for (label, response) in [
                    (Label::FullyAttributable, positive.clone()),
                    (Label::NotFullyAttributable, negative),
                ] {
                    let kind = if label.is_positive() { "pos" } else { "neg" };
                    out.push(GroundedExample {
                        id: format!("{name}-{d:04}-{s:02}-{kind}"),
                        document: document.clone(),
                        history: history.clone(),
                        response: Some(response),
                        label: Some(label),
                        dataset_tag: Some("synthetic".into()),
                    });
                }
            }
        }
        out
    };
    let dev = split("dev", n_train..n_train + n_dev);
    let test = split("test", n_train + n_dev..n_docs);
    Ok(SyntheticCorpus {
        training_lines,
        dev,
        test,
    })
}

impl SyntheticCorpus {
    /// Writes `train.txt`, `dev.jsonl` and `test.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut train = self.training_lines.join("\n");
        train.push('\n');
        fsutil::write_atomic(&dir.join("train.txt"), train.as_bytes())?;
        write_examples(&dir.join("dev.jsonl"), &self.dev)?;
        write_examples(&dir.join("test.jsonl"), &self.test)
    }
}
