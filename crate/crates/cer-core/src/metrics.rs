//! Evaluation metrics: confusion matrix, per-class precision/recall/F1,
//! accuracy, and the unweighted macro-F1 used for model selection. All
//! reported values are percentages.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::labels::LabelSpace;

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    label_space: LabelSpace,
}

impl ConfusionMatrix {
    pub fn from_predictions(
        y_true: &[usize],
        y_pred: &[usize],
        label_space: &LabelSpace,
    ) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(CoreError::Shape(format!(
                "{} true labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let c = label_space.len();
        let mut counts = vec![0u64; c * c];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= c || p >= c {
                return Err(CoreError::Index(format!(
                    "label pair ({t}, {p}) out of range for {c} classes"
                )));
            }
            counts[t * c + p] += 1;
        }
        Ok(ConfusionMatrix {
            counts,
            label_space: label_space.clone(),
        })
    }

    pub fn from_counts(counts: Vec<u64>, label_space: &LabelSpace) -> Result<Self> {
        if counts.len() != label_space.len() * label_space.len() {
            return Err(CoreError::Shape(format!(
                "expected {0}x{0} counts",
                label_space.len()
            )));
        }
        Ok(ConfusionMatrix {
            counts,
            label_space: label_space.clone(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.num_classes() + pred_class]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.count(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.num_classes()).map(|j| self.count(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.num_classes()).map(|i| self.count(i, j)).sum()
    }

    /// Build the full report. Zero-denominator precision/recall/F1 are
    /// defined as 0 so the macro average stays total.
    pub fn report(&self) -> EvalReport {
        let c = self.num_classes();
        let mut recall = vec![0.0; c];
        let mut precision = vec![0.0; c];
        let mut f1 = vec![0.0; c];
        for i in 0..c {
            let tp = self.count(i, i) as f64;
            let rs = self.row_sum(i) as f64;
            let cs = self.col_sum(i) as f64;
            recall[i] = if rs > 0.0 { 100.0 * tp / rs } else { 0.0 };
            precision[i] = if cs > 0.0 { 100.0 * tp / cs } else { 0.0 };
            f1[i] = if precision[i] + recall[i] > 0.0 {
                2.0 * precision[i] * recall[i] / (precision[i] + recall[i])
            } else {
                0.0
            };
        }
        let total = self.total();
        let accuracy = if total > 0 {
            100.0 * self.trace() as f64 / total as f64
        } else {
            0.0
        };
        EvalReport {
            per_class_precision: precision,
            per_class_recall: recall,
            macro_f1: macro_f1(&f1),
            per_class_f1: f1,
            accuracy,
            confusion: self.clone(),
        }
    }
}

/// Unweighted mean of per-class F1 values.
pub fn macro_f1(per_class: &[f64]) -> f64 {
    if per_class.is_empty() {
        return 0.0;
    }
    per_class.iter().sum::<f64>() / per_class.len() as f64
}

/// Everything the evaluation stage reports, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}
