//! Pinhole cameras and projection of ego-frame points into feature maps.
//!
//! Extrinsics are always stored ego→camera. Pixel coordinates have their
//! origin at the top-left corner of the top-left pixel, so pixel `(i, j)`
//! covers `[i, i+1) × [j, j+1)`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Mat4 = [[f64; 4]; 4];
pub type Point3 = [f64; 3];

/// Points at or closer than this camera-frame depth (m) are rejected.
pub const DEPTH_EPSILON: f64 = 1e-6;

const ROTATION_TOLERANCE: f64 = 1e-6;

/// Which direction a calibration extrinsic maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtrinsicsConvention {
    EgoToCamera,
    CameraToEgo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    name: String,
    intrinsics: Mat3,
    extrinsics: Mat4,
    image_size: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelHit {
    pub camera_index: usize,
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    BehindCamera,
    OutOfBounds,
}

/// Outcome of projecting one point into one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Hit { u: f64, v: f64, depth: f64 },
    Rejected(Rejection),
}

impl Projection {
    pub fn hit(self) -> Option<(f64, f64, f64)> {
        match self {
            Projection::Hit { u, v, depth } => Some((u, v, depth)),
            Projection::Rejected(_) => None,
        }
    }
}

impl CameraModel {
    /// Builds a camera, checking intrinsics, rigidity of the extrinsics and
    /// the image size.
    pub fn new(
        name: impl Into<String>,
        intrinsics: Mat3,
        extrinsics: Mat4,
        convention: ExtrinsicsConvention,
        image_size: (u32, u32),
    ) -> Result<Self> {
        let name = name.into();
        validate_intrinsics(&intrinsics).map_err(|e| prefix(&name, e))?;
        validate_rigid(&extrinsics).map_err(|e| prefix(&name, e))?;
        if image_size.0 == 0 || image_size.1 == 0 {
            return Err(Error::invalid(alloc::format!("camera {name}: image size must be at least 1x1")));
        }
        let extrinsics = match convention {
            ExtrinsicsConvention::EgoToCamera => extrinsics,
            ExtrinsicsConvention::CameraToEgo => invert_rigid(&extrinsics),
        };
        Ok(CameraModel { name, intrinsics, extrinsics, image_size })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn intrinsics(&self) -> &Mat3 {
        &self.intrinsics
    }

    /// Ego→camera rigid transform.
    pub fn extrinsics(&self) -> &Mat4 {
        &self.extrinsics
    }

    /// `(width, height)` in pixels.
    pub fn image_size(&self) -> (u32, u32) {
        self.image_size
    }

    /// Rescales the camera to a feature map at `scale` of the input resolution.
    pub fn scale_intrinsics(&self, scale: f64) -> Result<CameraModel> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::invalid(alloc::format!("scale must be positive, got {scale}")));
        }
        let mut k = self.intrinsics;
        for row in k.iter_mut().take(2) {
            for e in row.iter_mut() {
                *e *= scale;
            }
        }
        let w = libm::floor(self.image_size.0 as f64 * scale) as u32;
        let h = libm::floor(self.image_size.1 as f64 * scale) as u32;
        if w == 0 || h == 0 {
            return Err(Error::invalid(alloc::format!(
                "scale {scale} collapses camera {} to an empty image",
                self.name
            )));
        }
        Ok(CameraModel { name: self.name.clone(), intrinsics: k, extrinsics: self.extrinsics, image_size: (w, h) })
    }

    /// Ego-frame point to camera frame.
    pub fn to_camera_frame(&self, p: Point3) -> Point3 {
        transform_point(&self.extrinsics, p)
    }

    /// Projects an ego-frame point into this camera's pixel grid.
    pub fn project_point(&self, p: Point3) -> Result<Projection> {
        if !p.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("point has non-finite coordinates"));
        }
        Ok(self.project_unchecked(p))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: Point3) -> Projection {
        let [x, y, z] = transform_point(&self.extrinsics, p);
        if !(z > DEPTH_EPSILON) {
            return Projection::Rejected(Rejection::BehindCamera);
        }
        let k = &self.intrinsics;
        let u = (k[0][0] * x + k[0][1] * y) / z + k[0][2];
        let v = k[1][1] * y / z + k[1][2];
        let (w, h) = self.image_size;
        if u >= 0.0 && u < w as f64 && v >= 0.0 && v < h as f64 {
            Projection::Hit { u, v, depth: z }
        } else {
            Projection::Rejected(Rejection::OutOfBounds)
        }
    }

    /// Optical centre in the ego frame.
    pub fn center(&self) -> Point3 {
        let e = &self.extrinsics;
        let t = [e[0][3], e[1][3], e[2][3]];
        // c = -Rᵀ t
        let mut c = [0.0; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            *ci = -(e[0][i] * t[0] + e[1][i] * t[1] + e[2][i] * t[2]);
        }
        c
    }

    /// Ego-frame direction (not normalised) of the ray through pixel coordinate `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Point3 {
        let k = &self.intrinsics;
        let yc = (v - k[1][2]) / k[1][1];
        let xc = (u - k[0][2] - k[0][1] * yc) / k[0][0];
        let d = [xc, yc, 1.0];
        let e = &self.extrinsics;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = e[0][i] * d[0] + e[1][i] * d[1] + e[2][i] * d[2];
        }
        out
    }
}

fn prefix(name: &str, e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::invalid(alloc::format!("camera {name}: {m}")),
        other => other,
    }
}

fn validate_intrinsics(k: &Mat3) -> Result<()> {
    if !k.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::invalid("intrinsics must be finite"));
    }
    if k[2] != [0.0, 0.0, 1.0] {
        return Err(Error::invalid("intrinsics last row must be (0, 0, 1)"));
    }
    if k[1][0] != 0.0 {
        return Err(Error::invalid("intrinsics entry [1][0] must be 0"));
    }
    if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
        return Err(Error::invalid("focal lengths must be positive"));
    }
    Ok(())
}

fn validate_rigid(t: &Mat4) -> Result<()> {
    if !t.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::invalid("extrinsics must be finite"));
    }
    if t[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::invalid("extrinsics bottom row must be (0, 0, 0, 1)"));
    }
    // ‖RᵀR − I‖_F
    let mut err = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|r| t[r][i] * t[r][j]).sum();
            let d = dot - if i == j { 1.0 } else { 0.0 };
            err += d * d;
        }
    }
    if libm::sqrt(err) >= ROTATION_TOLERANCE {
        return Err(Error::invalid("extrinsics rotation block is not orthonormal"));
    }
    if det3(t) <= 0.0 {
        return Err(Error::invalid("extrinsics rotation block must have det +1"));
    }
    Ok(())
}

fn det3(t: &Mat4) -> f64 {
    t[0][0] * (t[1][1] * t[2][2] - t[1][2] * t[2][1]) - t[0][1] * (t[1][0] * t[2][2] - t[1][2] * t[2][0])
        + t[0][2] * (t[1][0] * t[2][1] - t[1][1] * t[2][0])
}

#[inline]
pub fn transform_point(t: &Mat4, p: Point3) -> Point3 {
    [
        t[0][0] * p[0] + t[0][1] * p[1] + t[0][2] * p[2] + t[0][3],
        t[1][0] * p[0] + t[1][1] * p[1] + t[1][2] * p[2] + t[1][3],
        t[2][0] * p[0] + t[2][1] * p[1] + t[2][2] * p[2] + t[2][3],
    ]
}

/// Inverse of a rigid transform `[R | t]` as `[Rᵀ | −Rᵀt]`.
pub fn invert_rigid(t: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = t[j][i];
        }
        out[i][3] = -(t[0][i] * t[0][3] + t[1][i] * t[1][3] + t[2][i] * t[2][3]);
    }
    out[3][3] = 1.0;
    out
}

pub fn compose(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Ordered set of cameras; position in the list is the camera index.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<CameraModel>,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraModel>) -> Result<Self> {
        for (i, a) in cameras.iter().enumerate() {
            if cameras[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::invalid(alloc::format!("duplicate camera name {}", a.name)));
            }
        }
        Ok(CameraRig { cameras })
    }

    pub fn cameras(&self) -> &[CameraModel] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// Every camera rescaled to a feature map at `scale`.
    pub fn scaled(&self, scale: f64) -> Result<CameraRig> {
        let cameras = self.cameras.iter().map(|c| c.scale_intrinsics(scale)).collect::<Result<Vec<_>>>()?;
        Ok(CameraRig { cameras })
    }

    /// Feature-map size shared by all cameras. Fails when cameras disagree.
    pub fn common_size(&self) -> Result<(u32, u32)> {
        let first = self.cameras.first().ok_or_else(|| Error::invalid("camera rig is empty"))?;
        let size = first.image_size;
        if self.cameras.iter().any(|c| c.image_size != size) {
            return Err(Error::invalid("cameras in a rig must share one image size"));
        }
        Ok(size)
    }

    /// Hits of `p` in every camera, in camera order.
    pub fn project_all(&self, p: Point3) -> Result<Vec<PixelHit>> {
        let mut hits = Vec::new();
        for (camera_index, cam) in self.cameras.iter().enumerate() {
            if let Projection::Hit { u, v, depth } = cam.project_point(p)? {
                hits.push(PixelHit { camera_index, u, v, depth });
            }
        }
        Ok(hits)
    }
}
