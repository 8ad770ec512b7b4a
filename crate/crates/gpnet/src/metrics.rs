//! Confusion-matrix based evaluation: mean IoU, pixel accuracy, and CSV
//! emission with a stable column order.

use crate::error::{GpError, Result};
use crate::tensor::LabelMap;

pub const DEFAULT_IGNORE_LABEL: u32 = 255;

/// counts[i * n + j] = pixels of true class i predicted as class j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, true_class: usize, pred_class: usize) -> u64 {
        self.counts[true_class * self.num_classes + pred_class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Tally one ground-truth / prediction pair. Pixels whose ground-truth
    /// label equals `ignore_label` are skipped.
    pub fn accumulate(
        &mut self,
        gt: &LabelMap,
        pred: &LabelMap,
        ignore_label: Option<u32>,
    ) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(GpError::InvalidArgument(format!(
                "label map sizes differ: {} vs {}",
                gt.len(),
                pred.len()
            )));
        }
        let n = self.num_classes as u32;
        for (&g, &p) in gt.labels.iter().zip(&pred.labels) {
            if Some(g) == ignore_label {
                continue;
            }
            if g >= n || p >= n {
                return Err(GpError::InvalidArgument(format!(
                    "label out of range: gt={g} pred={p} with {n} classes"
                )));
            }
            self.counts[(g * n + p) as usize] += 1;
        }
        Ok(())
    }

    /// Merge a partial matrix accumulated elsewhere. Associative and
    /// commutative, so batches can be tallied independently.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(GpError::InvalidArgument(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU `n_ii / (t_i + sum_j n_ji - n_ii)`. Classes absent from
    /// both ground truth and prediction yield None.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let n = self.num_classes;
        (0..n)
            .map(|i| {
                let n_ii = self.counts[i * n + i];
                let t_i: u64 = (0..n).map(|j| self.counts[i * n + j]).sum();
                let pred_i: u64 = (0..n).map(|j| self.counts[j * n + i]).sum();
                let denom = t_i + pred_i - n_ii;
                if denom == 0 {
                    None
                } else {
                    Some(n_ii as f64 / denom as f64)
                }
            })
            .collect()
    }

    /// Mean IoU over classes present in ground truth or prediction.
    pub fn mean_iou(&self) -> Result<f64> {
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(GpError::InvalidArgument(
                "mean_iou on an empty confusion matrix".into(),
            ));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    /// Overall fraction of correctly labeled pixels.
    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(GpError::InvalidArgument(
                "pixel accuracy on an empty confusion matrix".into(),
            ));
        }
        let diag: u64 = (0..self.num_classes)
            .map(|i| self.counts[i * self.num_classes + i])
            .sum();
        Ok(diag as f64 / total as f64)
    }

    /// Per-class IoU rows plus the mean, as CSV with a header row.
    /// Absent classes emit an empty IoU cell.
    pub fn to_iou_csv(&self) -> String {
        let mut out = String::from("class,iou\n");
        for (i, iou) in self.per_class_iou().iter().enumerate() {
            match iou {
                Some(v) => out.push_str(&format!("{i},{v:.12}\n")),
                None => out.push_str(&format!("{i},\n")),
            }
        }
        match self.mean_iou() {
            Ok(m) => out.push_str(&format!("mean,{m:.12}\n")),
            Err(_) => out.push_str("mean,\n"),
        }
        out
    }
}

/// Fraction of matching label pairs.
pub fn accuracy(preds: &[u32], gts: &[u32]) -> Result<f64> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(GpError::InvalidArgument(format!(
            "accuracy over {} predictions vs {} labels",
            preds.len(),
            gts.len()
        )));
    }
    let correct = preds.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / preds.len() as f64)
}
