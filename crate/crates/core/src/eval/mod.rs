//! Occupancy labels, IoU metrics and training losses.

pub mod losses;
pub mod metrics;

use alloc::vec::Vec;

pub use losses::{
    downsample_labels, focal_loss, gt_pyramid, level_loss, lovasz_softmax, scal_loss, softmax, total_loss, LossTerms,
    ScalKind,
};
pub use metrics::{confusion, iou, miou, ConfusionCounts};

use crate::tensor::Volume;
use crate::{Error, Result};

/// Per-voxel class ids in canonical voxel order; 0 is empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: [usize; 3],
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], labels: Vec<u8>, num_classes: usize) -> Result<Self> {
        if dims.iter().product::<usize>() != labels.len() {
            return Err(Error::shape(alloc::format!(
                "label volume {dims:?} needs {} labels, got {}",
                dims.iter().product::<usize>(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::invalid(alloc::format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(LabelVolume { dims, labels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-voxel argmax of a class-score volume; ties go to the lowest class.
    pub fn argmax(scores: &Volume) -> Result<Self> {
        let n = scores.num_voxels();
        let c = scores.channels();
        if c == 0 || c > 256 {
            return Err(Error::invalid("argmax needs 1..=256 classes"));
        }
        let d = scores.data();
        let labels = (0..n)
            .map(|i| {
                let mut best = 0;
                for k in 1..c {
                    if d[k * n + i] > d[best * n + i] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        Ok(LabelVolume { dims: scores.dims(), labels })
    }
}
