//! Segmentation losses and IoU evaluation.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_sample_into, FlowField, LabelMap, PredictionMap, IGNORE_LABEL};

/// Probabilities are clamped to this before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Mean of `-ln p(i, label(i))` over pixels whose label is not
/// [`IGNORE_LABEL`]; zero when every pixel is ignored.
pub fn cross_entropy(pred: &PredictionMap, labels: &LabelMap) -> Result<f32> {
    pred.ensure_same_size(labels, "prediction vs labels")?;
    labels.validate_classes(pred.num_classes())?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (p, &label) in pred.pixels().zip(labels.data()) {
        if label == IGNORE_LABEL {
            continue;
        }
        sum -= (p[label as usize] as f64).max(PROBABILITY_FLOOR).ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { (sum / count as f64) as f32 })
}

/// Flow-propagation consistency between two predictions.
///
/// `pred1` is carried to the second frame by backward sampling,
/// `p2_hat(x) = pred1(x - flow(x))`, and compared with `pred2` by the L2
/// norm over classes. The mean runs over pixels whose source lies inside
/// `pred1`; zero when there are none.
pub fn ofr_loss(pred1: &PredictionMap, pred2: &PredictionMap, flow_1to2: &FlowField) -> Result<f32> {
    if pred1.shape() != pred2.shape() {
        return Err(Error::shape(format!(
            "predictions {:?} vs {:?}",
            pred1.shape(),
            pred2.shape()
        )));
    }
    pred1.ensure_same_size(flow_1to2, "prediction vs flow")?;
    let mut propagated = vec![0.0f32; pred1.num_classes()];
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for row in 0..pred1.height() {
        for col in 0..pred1.width() {
            let f = flow_1to2.pixel(row, col);
            let (x, y) = (col as f64 - f[0] as f64, row as f64 - f[1] as f64);
            if !bilinear_sample_into(pred1, x, y, &mut propagated) {
                continue;
            }
            let sq: f64 = propagated
                .iter()
                .zip(pred2.pixel(row, col))
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum();
            sum += sq.sqrt();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { (sum / count as f64) as f32 })
}

/// Pixel counts indexed by (ground truth, prediction).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn add(&mut self, gt: usize, pred: usize, count: u64) {
        self.counts[gt * self.num_classes + pred] += count;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Ground-truth pixels of `class`.
    pub fn row_sum(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(class, p)).sum()
    }

    /// Pixels predicted as `class`.
    pub fn col_sum(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, class)).sum()
    }

    /// Adds another matrix of the same class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::shape(format!(
                "merging {} classes into {}",
                other.num_classes, self.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    /// Panics if the class counts differ.
    fn add_assign(&mut self, other: &ConfusionMatrix) {
        self.merge(other).expect("matching class counts");
    }
}

/// Counts `(gt, pred)` pairs over pixels where neither label is
/// [`IGNORE_LABEL`]. Any other label at or above `num_classes` is rejected.
pub fn confusion(gt: &LabelMap, pred_labels: &LabelMap, num_classes: usize) -> Result<ConfusionMatrix> {
    gt.ensure_same_size(pred_labels, "ground truth vs prediction")?;
    let mut cm = ConfusionMatrix::new(num_classes);
    for (&g, &p) in gt.data().iter().zip(pred_labels.data()) {
        if g == IGNORE_LABEL || p == IGNORE_LABEL {
            continue;
        }
        if g as usize >= num_classes || p as usize >= num_classes {
            return Err(Error::Domain(format!(
                "label pair ({g}, {p}) outside {num_classes} classes"
            )));
        }
        cm.add(g as usize, p as usize, 1);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    /// IoU per class; `None` for classes absent from both ground truth and
    /// prediction.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean over the present classes; NaN when none is present.
    pub miou: f64,
}

/// `IoU_c = cm[c][c] / (row_c + col_c - cm[c][c])`.
pub fn miou(cm: &ConfusionMatrix) -> IouReport {
    let per_class_iou: Vec<Option<f64>> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let union = cm.row_sum(c) + cm.col_sum(c) - tp;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = if present.is_empty() {
        f64::NAN
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    IouReport { per_class_iou, miou }
}
