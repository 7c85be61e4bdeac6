use serde::{Deserialize, Serialize, Serializer};

use crate::detection::Verdict;

use super::EvalError;

/// Confusion counts with `Malicious` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Tallies one scored flow. A missing prediction counts as wrong.
    pub fn record(&mut self, truth: Verdict, predicted: Option<Verdict>) {
        match (truth, predicted) {
            (Verdict::Malicious, Some(Verdict::Malicious)) => self.tp += 1,
            (Verdict::Malicious, _) => self.fn_ += 1,
            (Verdict::Benign, Some(Verdict::Benign)) => self.tn += 1,
            (Verdict::Benign, _) => self.fp += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Rates in [0, 1]. Unused denominators give 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(serialize_with = "round4")]
    pub accuracy: f64,
    #[serde(serialize_with = "round4")]
    pub precision: f64,
    #[serde(serialize_with = "round4")]
    pub recall: f64,
    #[serde(serialize_with = "round4")]
    pub f1: f64,
}

pub fn compute_metrics(counts: &ConfusionCounts) -> Result<Metrics, EvalError> {
    let total = counts.total();
    if total == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let accuracy = ratio(counts.tp + counts.tn, total);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
    })
}

/// Rounds to four decimals for reports; computation stays full precision.
pub fn round4<S: Serializer>(value: &f64, serializer: S) -> Result<S::Ok, S::Error> {
    serializer.serialize_f64((value * 10_000.0).round() / 10_000.0)
}
