//! JSON configuration: camera calibration, grids and pyramids.

use std::path::Path;

use occuvt_core::geometry::ExtrinsicsConvention;
use occuvt_core::grid::{GridSpec, LevelConfig, PyramidConfig, Sampling};
use occuvt_core::{CameraModel, CameraRig};
use serde::{Deserialize, Serialize};

use crate::error::CliResult;
use crate::formats::read_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    EgoToCam,
    CamToEgo,
}

/// One camera of a calibration file. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub name: String,
    pub intrinsics: [f64; 9],
    pub extrinsics: [f64; 16],
    #[serde(default)]
    pub convention: Convention,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraEntry {
    pub fn to_camera(&self) -> CliResult<CameraModel> {
        let k = &self.intrinsics;
        let e = &self.extrinsics;
        let conv = match self.convention {
            Convention::EgoToCam => ExtrinsicsConvention::EgoToCamera,
            Convention::CamToEgo => ExtrinsicsConvention::CameraToEgo,
        };
        Ok(CameraModel::new(
            self.name.clone(),
            [[k[0], k[1], k[2]], [k[3], k[4], k[5]], [k[6], k[7], k[8]]],
            [
                [e[0], e[1], e[2], e[3]],
                [e[4], e[5], e[6], e[7]],
                [e[8], e[9], e[10], e[11]],
                [e[12], e[13], e[14], e[15]],
            ],
            conv,
            (self.image_width, self.image_height),
        )?)
    }

    pub fn from_camera(cam: &CameraModel) -> Self {
        let (w, h) = cam.image_size();
        CameraEntry {
            name: cam.name().to_string(),
            intrinsics: std::array::from_fn(|i| cam.intrinsics()[i / 3][i % 3]),
            extrinsics: std::array::from_fn(|i| cam.extrinsics()[i / 4][i % 4]),
            convention: Convention::EgoToCam,
            image_width: w,
            image_height: h,
        }
    }
}

pub fn rig_from_entries(entries: &[CameraEntry]) -> CliResult<CameraRig> {
    let cams = entries.iter().map(CameraEntry::to_camera).collect::<CliResult<Vec<_>>>()?;
    Ok(CameraRig::new(cams)?)
}

pub fn rig_to_entries(rig: &CameraRig) -> Vec<CameraEntry> {
    rig.cameras().iter().map(CameraEntry::from_camera).collect()
}

pub fn load_rig(path: &Path) -> CliResult<CameraRig> {
    rig_from_entries(&read_json::<Vec<CameraEntry>>(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridJson {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z_range: [f64; 2],
    pub dims: [usize; 3],
}

impl GridJson {
    pub fn to_spec(&self) -> CliResult<GridSpec> {
        Ok(GridSpec::new(
            (self.x_range[0], self.x_range[1]),
            (self.y_range[0], self.y_range[1]),
            (self.z_range[0], self.z_range[1]),
            self.dims,
        )?)
    }

    pub fn from_spec(g: &GridSpec) -> Self {
        GridJson {
            x_range: [g.x_range.0, g.x_range.1],
            y_range: [g.y_range.0, g.y_range.1],
            z_range: [g.z_range.0, g.z_range.1],
            dims: g.dims,
        }
    }
}

pub fn load_grid(path: &Path) -> CliResult<GridSpec> {
    read_json::<GridJson>(path)?.to_spec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingJson {
    pub subdivision: usize,
    pub feature_scale: f64,
}

/// A pyramid as its finest grid plus one optional sampling per level; each
/// coarser level halves the grid dims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidJson {
    pub channels: usize,
    pub finest: GridJson,
    pub levels: Vec<Option<SamplingJson>>,
}

impl PyramidJson {
    pub fn to_config(&self) -> CliResult<PyramidConfig> {
        let mut grid = self.finest.to_spec()?;
        let mut levels = Vec::with_capacity(self.levels.len());
        for (i, s) in self.levels.iter().enumerate() {
            if i > 0 {
                grid = grid.halved();
            }
            levels.push(LevelConfig {
                level: i,
                grid,
                sampling: s.map(|s| Sampling { subdivision: s.subdivision, feature_scale: s.feature_scale }),
                channels: self.channels,
            });
        }
        Ok(PyramidConfig::new(levels)?)
    }

    pub fn from_config(p: &PyramidConfig) -> Self {
        PyramidJson {
            channels: p.channels(),
            finest: GridJson::from_spec(&p.finest().grid),
            levels: p
                .levels
                .iter()
                .map(|l| {
                    l.sampling.map(|s| SamplingJson { subdivision: s.subdivision, feature_scale: s.feature_scale })
                })
                .collect(),
        }
    }
}

pub fn load_pyramid(path: &Path) -> CliResult<PyramidConfig> {
    read_json::<PyramidJson>(path)?.to_config()
}
