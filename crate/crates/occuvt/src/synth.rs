//! Synthetic scenes: axis-aligned class boxes seen by a camera rig, rendered
//! as one-hot class feature maps, plus the matching voxel labels.

use occuvt_core::eval::LabelVolume;
use occuvt_core::geometry::{ExtrinsicsConvention, Mat4, Point3};
use occuvt_core::grid::GridSpec;
use occuvt_core::{CameraModel, CameraRig, FeatureMaps, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{rig_from_entries, rig_to_entries, CameraEntry, GridJson};
use crate::error::{CliError, CliResult};

pub const SURROUND_CAMERAS: usize = 6;
pub const SURROUND_SIZE: (u32, u32) = (1600, 900);
pub const SURROUND_FOCAL: f64 = 1266.0;
/// Distance of each surround camera from the ego origin.
const SURROUND_RADIUS: f64 = 1.0;

/// Ego→camera transform of a camera at `pos` looking along `yaw` (about +z)
/// tilted up by `pitch`. Camera axes: x right, y down, z forward.
pub fn look_extrinsics(pos: Point3, yaw: f64, pitch: f64) -> Mat4 {
    let f = [yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin()];
    let r = [yaw.sin(), -yaw.cos(), 0.0];
    let d = [f[1] * r[2] - f[2] * r[1], f[2] * r[0] - f[0] * r[2], f[0] * r[1] - f[1] * r[0]];
    let mut m = [[0.0; 4]; 4];
    for (i, row) in [r, d, f].iter().enumerate() {
        m[i][..3].copy_from_slice(row);
        m[i][3] = -(row[0] * pos[0] + row[1] * pos[1] + row[2] * pos[2]);
    }
    m[3][3] = 1.0;
    m
}

/// Six outward cameras, one every 60° of yaw, at 1600×900 with fx = fy = 1266.
pub fn surround_rig() -> CameraRig {
    let (w, h) = SURROUND_SIZE;
    let k = [[SURROUND_FOCAL, 0.0, w as f64 / 2.0], [0.0, SURROUND_FOCAL, h as f64 / 2.0], [0.0, 0.0, 1.0]];
    let names = ["front", "front_left", "back_left", "back", "back_right", "front_right"];
    let cams = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let yaw = std::f64::consts::TAU * i as f64 / SURROUND_CAMERAS as f64;
            let pos = [SURROUND_RADIUS * yaw.cos(), SURROUND_RADIUS * yaw.sin(), 0.0];
            CameraModel::new(*name, k, look_extrinsics(pos, yaw, 0.0), ExtrinsicsConvention::EgoToCamera, (w, h))
                .expect("surround camera is valid")
        })
        .collect();
    CameraRig::new(cams).expect("surround names are unique")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: u8,
}

impl SceneObject {
    fn contains(&self, p: Point3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Entry distance of the ray `o + t·d`, `t > 0`, by the slab method.
    fn ray_hit(&self, o: Point3, d: Point3) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut n, mut f) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if n > f {
                std::mem::swap(&mut n, &mut f);
            }
            t0 = t0.max(n);
            t1 = t1.min(f);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub grid: GridJson,
    /// Calibration; the surround rig when absent.
    #[serde(default)]
    pub cameras: Option<Vec<CameraEntry>>,
    pub objects: Vec<SceneObject>,
    /// Class carried by pixels that see no object.
    #[serde(default)]
    pub background_class: u8,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticScene {
    pub fn validate(&self) -> CliResult<GridSpec> {
        let g = self.grid.to_spec()?;
        let ranges = [g.x_range, g.y_range, g.z_range];
        for (i, o) in self.objects.iter().enumerate() {
            if o.class == 0 || o.class as usize >= NUM_CLASSES {
                return Err(CliError::input(format!("object {i}: class {} outside 1..{}", o.class, NUM_CLASSES - 1)));
            }
            for a in 0..3 {
                if !(o.min[a] < o.max[a]) || o.min[a] < ranges[a].0 || o.max[a] > ranges[a].1 {
                    return Err(CliError::input(format!("object {i}: box is empty or leaves the grid")));
                }
            }
        }
        if self.background_class as usize >= NUM_CLASSES {
            return Err(CliError::input("background class outside the class range"));
        }
        Ok(g)
    }

    pub fn rig(&self) -> CliResult<CameraRig> {
        match &self.cameras {
            Some(c) => rig_from_entries(c),
            None => Ok(surround_rig()),
        }
    }

    /// A scene with `count` random boxes of random classes.
    pub fn random(grid: &GridSpec, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ranges = [grid.x_range, grid.y_range, grid.z_range];
        let objects = (0..count)
            .map(|_| {
                let mut min = [0.0; 3];
                let mut max = [0.0; 3];
                for a in 0..3 {
                    let (lo, hi) = ranges[a];
                    let size = rng.random_range(0.1..0.4) * (hi - lo);
                    min[a] = rng.random_range(lo..hi - size);
                    max[a] = min[a] + size;
                }
                SceneObject { min, max, class: rng.random_range(1..NUM_CLASSES as u8) }
            })
            .collect();
        SyntheticScene { grid: GridJson::from_spec(grid), cameras: None, objects, background_class: 0, seed }
    }

    /// Class seen by each pixel of each camera, `Nc × H × W`.
    pub fn pixel_classes(&self, rig: &CameraRig) -> CliResult<(usize, usize, Vec<u8>)> {
        let (w, h) = rig.common_size()?;
        let (w, h) = (w as usize, h as usize);
        let mut out = Vec::with_capacity(rig.len() * w * h);
        for cam in rig.cameras() {
            let o = cam.center();
            for v in 0..h {
                for u in 0..w {
                    let d = cam.pixel_ray(u as f64 + 0.5, v as f64 + 0.5);
                    let nearest = self
                        .objects
                        .iter()
                        .filter_map(|b| b.ray_hit(o, d).map(|t| (t, b.class)))
                        .min_by(|a, b| a.0.total_cmp(&b.0));
                    out.push(nearest.map_or(self.background_class, |(_, c)| c));
                }
            }
        }
        Ok((h, w, out))
    }

    /// One-hot class features at the rig's resolution with `channels ≥ 17`
    /// channels (class `k` in channel `k`, the rest zero).
    pub fn render_features(&self, rig: &CameraRig, channels: usize) -> CliResult<FeatureMaps> {
        if channels < NUM_CLASSES {
            return Err(CliError::Shape(format!("one-hot features need at least {NUM_CLASSES} channels")));
        }
        let (h, w, classes) = self.pixel_classes(rig)?;
        let px = classes.len();
        let mut data = vec![0f32; channels * px];
        for (i, &c) in classes.iter().enumerate() {
            data[c as usize * px + i] = 1.0;
        }
        Ok(FeatureMaps::new(rig.len(), h, w, channels, data)?)
    }

    /// Voxel labels: the first object containing the voxel centre, else 0.
    pub fn ground_truth(&self, grid: &GridSpec) -> CliResult<LabelVolume> {
        let labels = (0..grid.num_voxels())
            .map(|i| {
                let c = grid.voxel_center(grid.voxel_coords(i)).expect("index in range");
                self.objects.iter().find(|o| o.contains(c)).map_or(0, |o| o.class)
            })
            .collect();
        Ok(LabelVolume::new(grid.dims, labels, NUM_CLASSES)?)
    }

    pub fn with_rig(mut self, rig: &CameraRig) -> Self {
        self.cameras = Some(rig_to_entries(rig));
        self
    }
}
