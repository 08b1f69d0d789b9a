//! Multi-level forward pass: lift, fuse, upsample-and-skip, classify.

use alloc::vec::Vec;

use super::layers::{Deconv3d, Linear};
use super::{fuse, upsample_skip, FusionWeights, Upsample};
use crate::grid::PyramidConfig;
use crate::projector::ProjectionSet;
use crate::tensor::{FeatureMaps, Volume};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LevelWeights {
    /// Present exactly on projection-built levels.
    pub fusion: Option<FusionWeights>,
    /// Upsamples this level onto the next finer one; absent on level 0.
    /// `None` on a coarser level means nearest-neighbour upsampling.
    pub upsample: Option<Deconv3d>,
    /// Per-voxel class head `C → num_classes`.
    pub head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineWeights {
    pub num_classes: usize,
    /// Indexed by level, 0 = finest.
    pub levels: Vec<LevelWeights>,
}

impl PipelineWeights {
    pub fn validate(&self, pyramid: &PyramidConfig) -> Result<()> {
        if self.levels.len() != pyramid.levels.len() {
            return Err(Error::shape(alloc::format!(
                "weights have {} levels, pyramid has {}",
                self.levels.len(),
                pyramid.levels.len()
            )));
        }
        let c = pyramid.channels();
        for (w, l) in self.levels.iter().zip(&pyramid.levels) {
            match (&w.fusion, l.sampling) {
                (Some(f), Some(_)) => {
                    f.validate()?;
                    if f.channels() != c {
                        return Err(Error::shape(alloc::format!("level {} fusion width differs from C", l.level)));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::shape(alloc::format!(
                        "level {} fusion weights do not match its sampling config",
                        l.level
                    )))
                }
            }
            if let Some(d) = &w.upsample {
                d.validate("upsample")?;
                if d.in_ch != c || d.out_ch != c {
                    return Err(Error::shape("upsample kernel must be C -> C"));
                }
            }
            w.head.validate("head")?;
            if w.head.in_dim != c || w.head.out_dim != self.num_classes {
                return Err(Error::shape("class head must be C -> num_classes"));
            }
        }
        Ok(())
    }
}

/// Lifted inputs of one projection-built level.
#[derive(Debug, Clone, Copy)]
pub struct LevelInput<'a> {
    pub features: &'a FeatureMaps,
    pub projections: &'a ProjectionSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Final volume per level, 0 = finest.
    pub volumes: Vec<Volume>,
    /// Class logits per level, `num_classes × X_l × Y_l × Z_l`.
    pub logits: Vec<Volume>,
}

/// Runs every level: projection-built levels lift and fuse their features,
/// then volumes are upsampled from the coarsest level down and added to the
/// next finer level. Levels without projections start from zero, so they
/// carry only the upsampled coarser result.
pub fn run_pipeline(
    inputs: &[Option<LevelInput<'_>>],
    weights: &PipelineWeights,
    pyramid: &PyramidConfig,
) -> Result<PipelineOutput> {
    pyramid.validate()?;
    weights.validate(pyramid)?;
    if inputs.len() != pyramid.levels.len() {
        return Err(Error::shape("one input slot per pyramid level is required"));
    }
    let c = pyramid.channels();
    let mut fused: Vec<Volume> = Vec::with_capacity(inputs.len());
    for ((input, level), w) in inputs.iter().zip(&pyramid.levels).zip(&weights.levels) {
        let dims = level.grid.dims;
        let vol = match (input, &w.fusion) {
            (Some(inp), Some(fw)) => {
                if inp.projections.level.grid.dims != dims {
                    return Err(Error::shape(alloc::format!(
                        "level {} projections built for another grid",
                        level.level
                    )));
                }
                if inp.features.channels() != c {
                    return Err(Error::shape(alloc::format!(
                        "level {} features have {} channels, expected {c}",
                        level.level,
                        inp.features.channels()
                    )));
                }
                let (local, global) = inp.projections.transform(inp.features)?;
                fuse(&local, &global, fw)?
            }
            (None, None) => Volume::zeros(c, dims),
            _ => return Err(Error::shape(alloc::format!("level {} input does not match its config", level.level))),
        };
        fused.push(vol);
    }

    let l = fused.len();
    let mut volumes: Vec<Option<Volume>> = (0..l).map(|_| None).collect();
    let mut carry: Option<Volume> = None;
    for lvl in (0..l).rev() {
        let base = core::mem::replace(&mut fused[lvl], Volume::zeros(0, [0, 0, 0]));
        let v = match carry.take() {
            None => base,
            Some(coarse) => {
                let mode = match &weights.levels[lvl + 1].upsample {
                    Some(d) => Upsample::Deconv(d),
                    None => Upsample::Nearest,
                };
                upsample_skip(&coarse, &base, mode)?
            }
        };
        carry = Some(v.clone());
        volumes[lvl] = Some(v);
    }
    let volumes: Vec<Volume> = volumes.into_iter().map(|v| v.expect("every level filled")).collect();
    let logits =
        volumes.iter().zip(&weights.levels).map(|(v, w)| class_logits(v, &w.head)).collect::<Result<Vec<_>>>()?;
    Ok(PipelineOutput { volumes, logits })
}

/// Applies the per-voxel class head.
pub fn class_logits(vol: &Volume, head: &Linear) -> Result<Volume> {
    if head.in_dim != vol.channels() {
        return Err(Error::shape("class head width differs from volume channels"));
    }
    Volume::new(head.out_dim, vol.dims(), head.apply(vol.data(), vol.num_voxels()))
}
