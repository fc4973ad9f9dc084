//! Threshold calibration on a dev split and precision/recall/F1/accuracy
//! reports on a test split. A score counts as positive iff it is strictly
//! greater than the threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::example::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub id: String,
    pub score: f64,
    pub positive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_tag: Option<String>,
}

impl LabeledScore {
    pub fn new(id: impl Into<String>, score: f64, positive: bool) -> Self {
        Self {
            id: id.into(),
            score,
            positive,
            dataset_tag: None,
        }
    }

    pub fn tagged(mut self, tag: impl Into<String>) -> Self {
        self.dataset_tag = Some(tag.into());
        self
    }
}

/// `fully_attributable` is positive; `generic` and `not_fully_attributable` are negative.
pub fn binarize_label(label: &str) -> Result<bool> {
    Ok(label.parse::<Label>()?.is_positive())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn measures(&self) -> Measures {
        Measures {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            accuracy: self.accuracy(),
            counts: *self,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    #[serde(serialize_with = "crate::records::fixed6")]
    pub precision: f64,
    #[serde(serialize_with = "crate::records::fixed6")]
    pub recall: f64,
    #[serde(serialize_with = "crate::records::fixed6")]
    pub f1: f64,
    #[serde(serialize_with = "crate::records::fixed6")]
    pub accuracy: f64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    #[serde(serialize_with = "crate::records::fixed6")]
    pub threshold: f64,
    #[serde(flatten)]
    pub measures: Measures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    #[serde(serialize_with = "crate::records::fixed6")]
    pub threshold: f64,
    #[serde(flatten)]
    pub measures: Measures,
    pub per_dataset: BTreeMap<String, DatasetReport>,
}

pub fn confusion(scores: &[LabeledScore], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for s in scores {
        c.add(s.score > threshold, s.positive);
    }
    c
}

/// Overall and per-tag measures, all at the same threshold.
pub fn classification_report(test: &[LabeledScore], threshold: f64) -> ClassificationReport {
    per_dataset_report(test, threshold, &BTreeMap::new())
}

/// Like [`classification_report`], but tags listed in `thresholds` use their
/// own threshold; the overall counts are the sum over examples of each
/// example's own decision.
pub fn per_dataset_report(
    test: &[LabeledScore],
    global: f64,
    thresholds: &BTreeMap<String, f64>,
) -> ClassificationReport {
    let mut overall = ConfusionCounts::default();
    let mut groups: BTreeMap<String, (f64, ConfusionCounts)> = BTreeMap::new();
    for s in test {
        let threshold = s
            .dataset_tag
            .as_ref()
            .and_then(|t| thresholds.get(t).copied())
            .unwrap_or(global);
        let predicted = s.score > threshold;
        overall.add(predicted, s.positive);
        if let Some(tag) = &s.dataset_tag {
            groups
                .entry(tag.clone())
                .or_insert((threshold, ConfusionCounts::default()))
                .1
                .add(predicted, s.positive);
        }
    }
    ClassificationReport {
        threshold: global,
        measures: overall.measures(),
        per_dataset: groups
            .into_iter()
            .map(|(tag, (threshold, c))| {
                (
                    tag,
                    DatasetReport {
                        threshold,
                        measures: c.measures(),
                    },
                )
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    #[serde(serialize_with = "crate::records::fixed6")]
    pub threshold: f64,
    #[serde(serialize_with = "crate::records::fixed6")]
    pub dev_f1: f64,
}

/// Candidate thresholds: one below the minimum, midpoints between
/// consecutive distinct scores, one above the maximum. Returns the candidate
/// with the best dev F1, ties to the smallest threshold.
pub fn calibrate(dev: &[LabeledScore]) -> Result<Calibration> {
    let has_pos = dev.iter().any(|s| s.positive);
    let has_neg = dev.iter().any(|s| !s.positive);
    if !has_pos || !has_neg {
        return Err(Error::DegenerateDevSet);
    }
    if let Some(bad) = dev.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite score for {}", bad.id)));
    }
    let mut values: Vec<f64> = dev.iter().map(|s| s.score).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();

    let mut pos: Vec<f64> = dev.iter().filter(|s| s.positive).map(|s| s.score).collect();
    let mut neg: Vec<f64> = dev.iter().filter(|s| !s.positive).map(|s| s.score).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let counts_at = |t: f64| {
        let above = |xs: &[f64]| (xs.len() - xs.partition_point(|&x| x <= t)) as u64;
        let tp = above(&pos);
        let fp = above(&neg);
        ConfusionCounts {
            tp,
            fp,
            tn: neg.len() as u64 - fp,
            fn_: pos.len() as u64 - tp,
        }
    };

    let mut candidates = Vec::with_capacity(values.len() + 1);
    candidates.push(values[0] - 1.0);
    candidates.extend(values.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.push(values[values.len() - 1] + 1.0);

    let mut best = Calibration {
        threshold: candidates[0],
        dev_f1: counts_at(candidates[0]).f1(),
    };
    for &t in &candidates[1..] {
        let f1 = counts_at(t).f1();
        if f1 > best.dev_f1 {
            best = Calibration { threshold: t, dev_f1: f1 };
        }
    }
    Ok(best)
}

pub fn calibrate_threshold(dev: &[LabeledScore]) -> Result<f64> {
    calibrate(dev).map(|c| c.threshold)
}

/// Calibrates a separate threshold for every tag that has both classes.
pub fn calibrate_per_dataset(dev: &[LabeledScore]) -> Result<BTreeMap<String, Calibration>> {
    let mut groups: BTreeMap<String, Vec<LabeledScore>> = BTreeMap::new();
    for s in dev {
        if let Some(tag) = &s.dataset_tag {
            groups.entry(tag.clone()).or_default().push(s.clone());
        }
    }
    let mut out = BTreeMap::new();
    for (tag, scores) in groups {
        match calibrate(&scores) {
            Ok(c) => {
                out.insert(tag, c);
            }
            Err(Error::DegenerateDevSet) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
