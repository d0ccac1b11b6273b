//! Labeled sample batches.
//!
//! Class labels are 1-based throughout the workspace: a classifier with `K`
//! outputs predicts labels in `[1, K]`, and column `k - 1` of its logits
//! corresponds to label `k`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Where a batch's samples came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    OldExemplar,
    NewData,
    GanReplay,
}

/// A `[B x D]` input tensor with one label per row, an optional per-sample
/// confidence, and a source tag.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    inputs: Tensor,
    labels: Vec<usize>,
    confidences: Option<Vec<f64>>,
    source: SourceTag,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>, source: SourceTag) -> Result<LabeledBatch> {
        let (rows, _) = inputs.dims2();
        if rows != labels.len() {
            return Err(Error::contract(format!(
                "batch has {rows} rows but {} labels",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l == 0) {
            return Err(Error::contract(format!(
                "labels are 1-based; found label {bad}"
            )));
        }
        Ok(LabeledBatch {
            inputs,
            labels,
            confidences: None,
            source,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>, source: SourceTag) -> Result<LabeledBatch> {
        LabeledBatch::new(Tensor::from_rows(rows), labels, source)
    }

    /// Zero-sample batch of the given feature dimension.
    pub fn empty(dim: usize, source: SourceTag) -> LabeledBatch {
        LabeledBatch {
            inputs: Tensor::zeros(&[0, dim]),
            labels: Vec::new(),
            confidences: None,
            source,
        }
    }

    /// Attaches per-sample confidences in `[0, 1]`.
    pub fn with_confidences(mut self, confidences: Vec<f64>) -> Result<LabeledBatch> {
        if confidences.len() != self.labels.len() {
            return Err(Error::contract(format!(
                "batch has {} samples but {} confidences",
                self.labels.len(),
                confidences.len()
            )));
        }
        if let Some(bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::contract(format!(
                "confidence {bad} outside [0, 1]"
            )));
        }
        self.confidences = Some(confidences);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.dims2().1
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn confidences(&self) -> Option<&[f64]> {
        self.confidences.as_deref()
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i)
    }

    pub fn max_label(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Distinct labels in ascending order.
    pub fn class_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Sample count per label, in label order.
    pub fn count_per_class(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    /// Row indices carrying `label`, ascending.
    pub fn indices_of_class(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// New batch holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        let dim = self.dim();
        let src = self.inputs.values();
        let mut values = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        let mut confs = self.confidences.as_ref().map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            assert!(i < self.labels.len(), "select: row {i} out of {}", self.labels.len());
            values.extend_from_slice(&src[i * dim..(i + 1) * dim]);
            labels.push(self.labels[i]);
            if let (Some(out), Some(all)) = (confs.as_mut(), self.confidences.as_ref()) {
                out.push(all[i]);
            }
        }
        drop(src);
        LabeledBatch {
            inputs: Tensor::new(values, &[indices.len(), dim]),
            labels,
            confidences: confs,
            source: self.source,
        }
    }

    /// Rows whose labels fall in `[lo, hi]` inclusive.
    pub fn filter_label_range(&self, lo: usize, hi: usize) -> LabeledBatch {
        let idx: Vec<usize> = self
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l >= lo && l <= hi)
            .map(|(i, _)| i)
            .collect();
        self.select(&idx)
    }

    /// Concatenation; keeps the left operand's source tag. Confidences are
    /// kept only when both sides carry them.
    pub fn concat(&self, other: &LabeledBatch) -> Result<LabeledBatch> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        if self.dim() != other.dim() {
            return Err(Error::contract(format!(
                "cannot concatenate batches of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let mut values = self.inputs.to_vec();
        values.extend(other.inputs.to_vec());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let confidences = match (&self.confidences, &other.confidences) {
            (Some(a), Some(b)) => {
                let mut c = a.clone();
                c.extend_from_slice(b);
                Some(c)
            }
            _ => None,
        };
        Ok(LabeledBatch {
            inputs: Tensor::new(values, &[labels.len(), self.dim()]),
            labels,
            confidences,
            source: self.source,
        })
    }

    /// Random label-stratified holdout: `per_class` samples per class, or
    /// half the class rounded up when a class is smaller than `per_class`.
    /// Returns `(held_out, rest)`.
    pub fn split_holdout(&self, per_class: usize, rng: &mut RngState) -> (LabeledBatch, LabeledBatch) {
        let mut held = Vec::new();
        let mut rest = Vec::new();
        for class in self.class_ids() {
            let idx = self.indices_of_class(class);
            let want = if idx.len() < per_class {
                idx.len().div_ceil(2)
            } else {
                per_class
            };
            let chosen = rng.sample_indices(idx.len(), want);
            let mut is_held = vec![false; idx.len()];
            for &c in &chosen {
                is_held[c] = true;
            }
            for (pos, &row) in idx.iter().enumerate() {
                if is_held[pos] {
                    held.push(row);
                } else {
                    rest.push(row);
                }
            }
        }
        held.sort_unstable();
        rest.sort_unstable();
        (self.select(&held), self.select(&rest))
    }
}
