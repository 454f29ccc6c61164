//! Binary classification metrics with "hallucinated" as the positive class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::RunReport;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall, f1)`, with every 0/0 defined as 0.
pub fn precision_recall_f1(c: &ConfusionCounts) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

pub fn accuracy(c: &ConfusionCounts) -> f64 {
    ratio(c.tp + c.tn, c.total())
}

/// Percentage-point change in the LLM's verdict accuracy when every flagged
/// sample has its verdict flipped: `100 · (TP − FP) / n`.
pub fn relative_fake_fact_improvement(llm_correct: &[bool], detector_positive: &[bool]) -> Result<f64> {
    if llm_correct.len() != detector_positive.len() {
        return Err(Error::LengthMismatch {
            left: llm_correct.len(),
            right: detector_positive.len(),
        });
    }
    if llm_correct.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut delta = 0i64;
    for (&correct, &flagged) in llm_correct.iter().zip(detector_positive) {
        if flagged {
            delta += if correct { -1 } else { 1 };
        }
    }
    Ok(100.0 * delta as f64 / llm_correct.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Only meaningful for text classification, where label 1 means the LLM's
    /// verdict was wrong.
    pub fake_fact_improvement: Option<f64>,
}

impl Metrics {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let (precision, recall, f1) = precision_recall_f1(&counts);
        Self {
            counts,
            accuracy: accuracy(&counts),
            precision,
            recall,
            f1,
            fake_fact_improvement: None,
        }
    }

    pub fn evaluate(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        Ok(Self::from_counts(confusion(predictions, labels)?))
    }

    /// Classification metrics plus the fake-fact improvement derived from the
    /// labels.
    pub fn evaluate_classification(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        let mut m = Self::evaluate(predictions, labels)?;
        let llm_correct: Vec<bool> = labels.iter().map(|&l| l == 0).collect();
        let flagged: Vec<bool> = predictions.iter().map(|&p| p != 0).collect();
        m.fake_fact_improvement = Some(relative_fake_fact_improvement(&llm_correct, &flagged)?);
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilteredRuns<'a> {
    pub kept: Vec<&'a RunReport>,
    pub filtered_out: usize,
}

impl FilteredRuns<'_> {
    /// Arithmetic mean of `f` over the kept runs; `None` when nothing survived.
    pub fn mean(&self, f: impl Fn(&RunReport) -> Option<f64>) -> Option<f64> {
        let values: Vec<f64> = self.kept.iter().filter_map(|r| f(r)).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Keeps the runs whose validation F1 is above zero.
pub fn filter_runs(reports: &[RunReport]) -> FilteredRuns<'_> {
    let kept: Vec<&RunReport> = reports.iter().filter(|r| r.validation.f1 > 0.0).collect();
    FilteredRuns {
        filtered_out: reports.len() - kept.len(),
        kept,
    }
}
