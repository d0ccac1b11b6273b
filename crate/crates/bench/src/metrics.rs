//! Evaluation metrics: the confusion matrix and the accuracies derived from
//! it.

use incrlearn_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// K x K count matrix; entry `(i, j)` counts true-class-`i+1` samples
/// predicted as class `j+1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Tallies 1-based predictions against 1-based labels.
    pub fn from_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
        if predictions.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(classes);
        for (&p, &l) in predictions.iter().zip(labels) {
            if p == 0 || p > classes || l == 0 || l > classes {
                return Err(Error::contract(format!(
                    "prediction {p} / label {l} outside [1, {classes}]"
                )));
            }
            cm.counts[(l - 1) * classes + (p - 1)] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        assert!(
            (1..=self.classes).contains(&true_class) && (1..=self.classes).contains(&predicted),
            "class pair ({true_class}, {predicted}) outside [1, {}]",
            self.classes
        );
        self.counts[(true_class - 1) * self.classes + (predicted - 1)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes)
            .map(|i| self.counts[i * self.classes + i])
            .sum()
    }

    /// Count of test samples per true class.
    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|i| self.counts[i * self.classes..(i + 1) * self.classes].iter().sum())
            .collect()
    }

    /// Overall top-1 accuracy; 0 on an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    /// Per-class accuracy, `None` for classes with no test samples.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.row_sums()
            .iter()
            .enumerate()
            .map(|(i, &row)| {
                if row == 0 {
                    None
                } else {
                    Some(self.counts[i * self.classes + i] as f64 / row as f64)
                }
            })
            .collect()
    }

    /// Accuracy over a subset of true classes (1-based), e.g. "the first
    /// part's classes after the second increment".
    pub fn subset_accuracy(&self, classes: impl IntoIterator<Item = usize>) -> f64 {
        let mut hit = 0u64;
        let mut total = 0u64;
        for c in classes {
            assert!((1..=self.classes).contains(&c));
            hit += self.counts[(c - 1) * self.classes + (c - 1)];
            total += self.counts[(c - 1) * self.classes..c * self.classes].iter().sum::<u64>();
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}
