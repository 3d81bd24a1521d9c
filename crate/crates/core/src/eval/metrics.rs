use serde::{Deserialize, Serialize};

use crate::dataset::{EngagementLabel, NUM_CLASSES};
use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn from_pairs(truth: &[EngagementLabel], pred: &[EngagementLabel]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!(
                "{} true labels, {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = ConfusionMatrix::default();
        for (t, p) in truth.iter().zip(pred) {
            cm.record(*t, *p);
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: EngagementLabel, pred: EngagementLabel) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (r, o) in self.counts.iter_mut().zip(other.counts.iter()) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// `TP / (TP + FP)`, 0 when nothing was predicted as `c`.
    pub fn precision(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.col_sum(c))
    }

    /// `TP / (TP + FN)`, 0 when class `c` never occurs.
    pub fn recall(&self, c: usize) -> f64 {
        ratio(self.counts[c][c], self.row_sum(c))
    }

    pub fn f1(&self, c: usize) -> f64 {
        let (p, r) = (self.precision(c), self.recall(c));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
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

fn non_empty(cm: &ConfusionMatrix) -> Result<()> {
    if cm.total() == 0 {
        return Err(Error::InvalidInput("empty confusion matrix".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancedFormula {
    /// Mean per-class recall.
    #[default]
    MacroRecall,
    /// Mean per-class `TP / (TP + FP)`.
    AsPrinted,
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    non_empty(cm)?;
    Ok(100.0 * cm.trace() as f64 / cm.total() as f64)
}

pub fn balanced_accuracy(cm: &ConfusionMatrix, formula: BalancedFormula) -> Result<f64> {
    non_empty(cm)?;
    let per = |c| match formula {
        BalancedFormula::MacroRecall => cm.recall(c),
        BalancedFormula::AsPrinted => cm.precision(c),
    };
    Ok(100.0 * (0..NUM_CLASSES).map(per).sum::<f64>() / NUM_CLASSES as f64)
}

pub fn mean_f_score(cm: &ConfusionMatrix) -> Result<f64> {
    non_empty(cm)?;
    Ok(100.0 * (0..NUM_CLASSES).map(|c| cm.f1(c)).sum::<f64>() / NUM_CLASSES as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Percentages for one fold or an aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fold_id: String,
    pub mean_f_score: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub per_class: [ClassMetrics; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(
        fold_id: impl Into<String>,
        cm: &ConfusionMatrix,
        formula: BalancedFormula,
    ) -> Result<Self> {
        Ok(MetricsReport {
            fold_id: fold_id.into(),
            mean_f_score: mean_f_score(cm)?,
            accuracy: accuracy(cm)?,
            balanced_accuracy: balanced_accuracy(cm, formula)?,
            per_class: std::array::from_fn(|c| ClassMetrics {
                precision: 100.0 * cm.precision(c),
                recall: 100.0 * cm.recall(c),
                f1: 100.0 * cm.f1(c),
            }),
            confusion: *cm,
        })
    }
}
