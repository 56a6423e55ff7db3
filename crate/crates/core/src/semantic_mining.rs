//! Object-guided refinement of pseudo labels.
//!
//! Every object mask votes for the most frequent movable class among the
//! pseudo labels it covers. Predictions on covered pixels are boosted for
//! that class by a factor `1 + lambda` before the argmax, so the pixels of
//! one rigid object tend to agree on a single label.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses_eval::cross_entropy;
use crate::tensor::{argmax_first, BinaryMask, Grid, LabelMap, PredictionMap};

/// Default refinement strength.
pub const DEFAULT_LAMBDA: f32 = 0.8;

/// Classes that can move on their own.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct MovingCategorySet {
    classes: BTreeSet<u8>,
}

impl MovingCategorySet {
    pub fn new(classes: impl IntoIterator<Item = u8>) -> Result<Self> {
        let classes: BTreeSet<u8> = classes.into_iter().collect();
        if classes.is_empty() {
            return Err(Error::Domain("moving category set is empty".into()));
        }
        Ok(Self { classes })
    }

    /// person, rider, car, truck, bus, train, motorcycle and bicycle in the
    /// 19-class Cityscapes numbering.
    pub fn cityscapes() -> Self {
        Self {
            classes: (11..=18).collect(),
        }
    }

    pub fn contains(&self, class: u8) -> bool {
        self.classes.contains(&class)
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.classes.iter().copied()
    }

    /// Checks that every class index is below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.classes.last() {
            Some(&max) if max as usize >= num_classes => Err(Error::Domain(format!(
                "moving class {max} outside {num_classes} classes"
            ))),
            _ => Ok(()),
        }
    }
}

impl Default for MovingCategorySet {
    fn default() -> Self {
        Self::cityscapes()
    }
}

impl TryFrom<Vec<u8>> for MovingCategorySet {
    type Error = Error;

    fn try_from(value: Vec<u8>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<MovingCategorySet> for Vec<u8> {
    fn from(set: MovingCategorySet) -> Vec<u8> {
        set.classes.into_iter().collect()
    }
}

/// The movable class occurring most often under `object_mask`, smaller index
/// on ties; `None` when the mask covers no movable pixel.
pub fn dominant_category(
    pseudo: &LabelMap,
    object_mask: &BinaryMask,
    moving: &MovingCategorySet,
) -> Result<Option<u8>> {
    pseudo.ensure_same_size(object_mask, "pseudo labels vs object mask")?;
    let mut counts = [0usize; 256];
    for (&label, &on) in pseudo.data().iter().zip(object_mask.data()) {
        if on == 1 && moving.contains(label) {
            counts[label as usize] += 1;
        }
    }
    let (class, &count) = counts
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, c)| c)
        .expect("non-empty array");
    Ok((count > 0).then_some(class as u8))
}

/// Per-pixel, per-class boost with values in `{0, lambda}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningWeight(Grid<f32>);

impl MiningWeight {
    pub fn zeros(height: usize, width: usize, num_classes: usize) -> Self {
        Self(Grid::filled(height, width, num_classes, 0.0))
    }

    pub fn get(&self, row: usize, col: usize, class: usize) -> f32 {
        self.0.at(row, col, class)
    }

    pub fn as_grid(&self) -> &Grid<f32> {
        &self.0
    }
}

/// Sets `w(i, c) = lambda` wherever a mask whose dominant class is `c`
/// covers pixel `i`. Overlaps take the maximum, so mask order is irrelevant.
pub fn mining_weight<'a>(
    objects: impl IntoIterator<Item = (&'a BinaryMask, Option<u8>)>,
    lambda: f32,
    height: usize,
    width: usize,
    num_classes: usize,
) -> Result<MiningWeight> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda {lambda} must be finite and >= 0")));
    }
    let mut weight = MiningWeight::zeros(height, width, num_classes);
    for (mask, class) in objects {
        let Some(class) = class else { continue };
        if class as usize >= num_classes {
            return Err(Error::Domain(format!(
                "class {class} outside {num_classes} classes"
            )));
        }
        if mask.height() != height || mask.width() != width {
            return Err(Error::shape(format!(
                "object mask {}x{} on a {height}x{width} frame",
                mask.height(),
                mask.width()
            )));
        }
        for (i, &on) in mask.data().iter().enumerate() {
            if on == 1 {
                let w = &mut weight.0.pixel_mut(i / width, i % width)[class as usize];
                *w = w.max(lambda);
            }
        }
    }
    Ok(weight)
}

/// `argmax_c (w(i, c) + 1) * p(i, c)`, smaller index on ties.
pub fn refine_labels(pred: &PredictionMap, weight: &MiningWeight) -> Result<LabelMap> {
    if pred.shape() != weight.0.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs weight {:?}",
            pred.shape(),
            weight.0.shape()
        )));
    }
    let labels = pred
        .pixels()
        .zip(weight.0.pixels())
        .map(|(p, w)| {
            argmax_first(
                p.iter()
                    .zip(w)
                    .map(|(&p, &w)| ((w as f64 + 1.0) * p as f64) as f32),
            ) as u8
        })
        .collect();
    LabelMap::new(pred.height(), pred.width(), labels)
}

/// Dominant classes from the initial `pseudo` map, then weighting and
/// refinement in a single pass.
pub fn refine_frame(
    pred: &PredictionMap,
    pseudo: &LabelMap,
    object_masks: &[BinaryMask],
    moving: &MovingCategorySet,
    lambda: f32,
) -> Result<LabelMap> {
    pred.ensure_same_size(pseudo, "prediction vs pseudo labels")?;
    let dominant = object_masks
        .iter()
        .map(|m| dominant_category(pseudo, m, moving))
        .collect::<Result<Vec<_>>>()?;
    let weight = mining_weight(
        object_masks.iter().zip(dominant),
        lambda,
        pred.height(),
        pred.width(),
        pred.num_classes(),
    )?;
    refine_labels(pred, &weight)
}

/// Negative log-likelihood of the refined labels, averaged over non-ignore
/// pixels.
pub fn moda_loss(pred: &PredictionMap, refined: &LabelMap) -> Result<f32> {
    cross_entropy(pred, refined)
}
