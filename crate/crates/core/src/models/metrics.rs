//! Confusion counts and the per-class F1 score.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Per-class true-positive / false-positive / false-negative tallies from one
/// labeled evaluation pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_class: Vec<ClassCounts>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        Self {
            per_class: vec![ClassCounts::default(); n_classes],
        }
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        if actual == predicted {
            self.per_class[actual].tp += 1;
        } else {
            self.per_class[predicted].fp += 1;
            self.per_class[actual].fn_ += 1;
        }
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut counts = Self::new(n_classes);
        for (actual, predicted) in pairs {
            counts.record(actual, predicted);
        }
        counts
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }

    pub fn f1_scores(&self) -> Vec<f64> {
        (0..self.n_classes()).map(|c| f1_score(self, c)).collect()
    }

    pub fn macro_f1(&self) -> f64 {
        let scores = self.f1_scores();
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// 2·TP / (2·TP + FP + FN); zero when the denominator is zero.
pub fn f1_score(counts: &ConfusionCounts, class: usize) -> f64 {
    let c = counts.per_class[class];
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
