//! Pixel confusion counts, balanced accuracy and intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::raster::TamperMask;
use crate::{Error, Result};

/// IoU at or above this value counts as a good localization.
pub const GOOD_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
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

    /// tp / (tp + fn).
    pub fn sensitivity(&self) -> Result<f64> {
        ratio(self.tp, self.tp + self.fn_, "sensitivity: no spliced pixels in the truth")
    }

    /// tn / (tn + fp).
    pub fn specificity(&self) -> Result<f64> {
        ratio(self.tn, self.tn + self.fp, "specificity: no pristine pixels in the truth")
    }

    /// tp / (tp + fp).
    pub fn precision(&self) -> Result<f64> {
        ratio(self.tp, self.tp + self.fp, "precision: estimate has no spliced pixels")
    }
}

fn ratio(num: u64, den: u64, what: &str) -> Result<f64> {
    if den == 0 {
        return Err(Error::UndefinedMetric(what.to_string()));
    }
    Ok(num as f64 / den as f64)
}

pub fn confusion(est: &TamperMask, truth: &TamperMask) -> Result<ConfusionCounts> {
    if est.dims() != truth.dims() {
        return Err(Error::Validation(format!(
            "estimate is {:?}, truth is {:?}",
            est.dims(),
            truth.dims()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&e, &t) in est.bits().iter().zip(truth.bits()) {
        match (e, t) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Mean of sensitivity and specificity.
pub fn balanced_accuracy(c: &ConfusionCounts) -> Result<f64> {
    Ok(0.5 * (c.sensitivity()? + c.specificity()?))
}

pub fn iou(c: &ConfusionCounts) -> Result<f64> {
    ratio(c.tp, c.tp + c.fp + c.fn_, "iou: both masks are empty")
}
