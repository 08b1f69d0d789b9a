//! Confusion counts and IoU / mIoU.

use alloc::vec;
use alloc::vec::Vec;

use super::LabelVolume;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    /// Occupied-vs-empty counts `(tp, fp, fn)`.
    pub geometric: (u64, u64, u64),
    /// Leave class 0 out of mIoU.
    pub ignore_empty: bool,
}

impl ConfusionCounts {
    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Occupied-vs-empty IoU; `None` when both volumes are empty.
    pub fn geometric_iou(&self) -> Option<f64> {
        let (tp, fp, fn_) = self.geometric;
        ratio(tp, tp + fp + fn_)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion(
    pred: &LabelVolume,
    gt: &LabelVolume,
    num_classes: usize,
    ignore_empty: bool,
) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(alloc::format!(
            "prediction {:?} and ground truth {:?} differ",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut c = ConfusionCounts {
        tp: vec![0; num_classes],
        fp: vec![0; num_classes],
        fn_: vec![0; num_classes],
        geometric: (0, 0, 0),
        ignore_empty,
    };
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(Error::invalid("label outside the class range"));
        }
        if p == g {
            c.tp[g] += 1;
        } else {
            c.fp[p] += 1;
            c.fn_[g] += 1;
        }
        match (p != 0, g != 0) {
            (true, true) => c.geometric.0 += 1,
            (true, false) => c.geometric.1 += 1,
            (false, true) => c.geometric.2 += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// `TP / (TP + FP + FN)`; `None` when the class is absent from both volumes.
pub fn iou(counts: &ConfusionCounts, class: usize) -> Option<f64> {
    let (tp, fp, fn_) = (counts.tp[class], counts.fp[class], counts.fn_[class]);
    ratio(tp, tp + fp + fn_)
}

/// Mean IoU over classes with a defined IoU (class 0 skipped when
/// `ignore_empty`). `None` when no class qualifies.
pub fn miou(counts: &ConfusionCounts) -> Option<f64> {
    let start = usize::from(counts.ignore_empty);
    let vals: Vec<f64> = (start..counts.num_classes()).filter_map(|c| iou(counts, c)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
