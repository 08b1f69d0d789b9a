//! Projection-matrix view transformation for multi-camera 3D semantic occupancy.
//!
//! Multi-camera feature maps are lifted into a local 3D feature volume and a
//! global BEV plane by multiplying them with two static sparse projection
//! matrices. The matrices are built once from camera calibration and a voxel
//! grid, so the lifting step itself is a single sparse-dense product.
//!
//! The crate is `no_std` (with `alloc`). The `parallel` feature (default)
//! pulls in `std` and rayon for multi-threaded builds and kernels; results are
//! bit-identical with and without it.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod par;

pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod grid;
pub mod projector;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{CameraModel, CameraRig, PixelHit, Projection, Rejection};
pub use grid::{GridSpec, LevelConfig, PyramidConfig, Sampling};
pub use projector::{Aggregation, HitRule, ProjectionSet};
pub use sparse::{CsrMatrix, DenseMatrix, MemoryStats};
pub use tensor::{BevFeature, FeatureMaps, Volume};

/// Number of occupancy classes including the empty class 0.
pub const NUM_CLASSES: usize = 17;
