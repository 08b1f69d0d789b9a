//! Dense feature containers and the OVTF tensor encoding.
//!
//! OVTF layout (little-endian):
//!
//! ```text
//! magic "OVTF" | version u32 = 1 | dtype u32 (0 = f32, 1 = u8) | ndim u32
//! dims u64[ndim] | data in row-major order (last dim fastest)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::sparse::{DenseMatrix, Reader};
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"OVTF";
pub const TENSOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u32 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::U8(_) => 1,
        }
    }
}

/// A shaped tensor as stored in an OVTF stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape("tensor dims overflow"))?;
        if n != data.len() {
            return Err(Error::shape(alloc::format!("tensor dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(dims, TensorData::F32(data))
    }

    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Tensor::new(dims, TensorData::U8(data))
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::format("expected an f32 tensor, found u8")),
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U8(_) => Err(Error::format("expected an f32 tensor, found u8")),
        }
    }

    pub fn into_u8(self) -> Result<Vec<u8>> {
        match self.data {
            TensorData::U8(v) => Ok(v),
            TensorData::F32(_) => Err(Error::format("expected a u8 tensor, found f32")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let elem = match self.data {
            TensorData::F32(_) => 4,
            TensorData::U8(_) => 1,
        };
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + elem * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&self.data.dtype().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        if rd.take(4)? != TENSOR_MAGIC {
            return Err(Error::format("bad magic, expected OVTF"));
        }
        let version = rd.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::format(alloc::format!("unsupported OVTF version {version}")));
        }
        let dtype = rd.u32()?;
        let ndim = rd.u32()? as usize;
        if rd.remaining() < ndim * 8 {
            return Err(Error::format("truncated stream"));
        }
        let dims = (0..ndim).map(|_| rd.len_u64()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("tensor dims overflow"))?;
        let elem = match dtype {
            0 => 4,
            1 => 1,
            other => return Err(Error::format(alloc::format!("unknown dtype {other}"))),
        };
        if n.checked_mul(elem) != Some(rd.remaining()) {
            return Err(Error::format(alloc::format!(
                "payload is {} bytes, dims {dims:?} imply {}",
                rd.remaining(),
                n.saturating_mul(elem)
            )));
        }
        let payload = rd.take(n * elem)?;
        let data = if dtype == 0 {
            TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        } else {
            TensorData::U8(payload.to_vec())
        };
        Ok(Tensor { dims, data })
    }
}

/// Flattened multi-camera feature maps of one level, `C × (Nc·H·W)`.
///
/// Pixel `(n, v, u)` sits at column `n·H·W + v·W + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    num_cameras: usize,
    height: usize,
    width: usize,
    data: DenseMatrix,
}

impl FeatureMaps {
    pub fn new(num_cameras: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let data = DenseMatrix::new(channels, num_cameras * height * width, data)?;
        Ok(FeatureMaps { num_cameras, height, width, data })
    }

    pub fn zeros(num_cameras: usize, height: usize, width: usize, channels: usize) -> Self {
        FeatureMaps { num_cameras, height, width, data: DenseMatrix::zeros(channels, num_cameras * height * width) }
    }

    pub fn num_cameras(&self) -> usize {
        self.num_cameras
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.data.rows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn pixel_index(&self, camera: usize, v: usize, u: usize) -> usize {
        camera * self.height * self.width + v * self.width + u
    }

    pub fn get(&self, channel: usize, camera: usize, v: usize, u: usize) -> f32 {
        self.data.get(channel, self.pixel_index(camera, v, u))
    }

    /// As a `[C, Nc, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.channels(), self.num_cameras, self.height, self.width],
            data: TensorData::F32(self.data.data().to_vec()),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.dims.len() != 4 {
            return Err(Error::shape(alloc::format!("feature tensor must be [C, Nc, H, W], got {:?}", t.dims)));
        }
        let (c, n, h, w) = (t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
        FeatureMaps::new(n, h, w, c, t.into_f32()?)
    }
}

/// A `C × X × Y × Z` feature volume in canonical voxel order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    channels: usize,
    dims: [usize; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(channels: usize, dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if channels * dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape(alloc::format!(
                "volume {channels}x{dims:?} needs {} values, got {}",
                channels * dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Volume { channels, dims, data })
    }

    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Volume { channels, dims, data: vec![0.0; channels * dims.iter().product::<usize>()] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, x: usize, y: usize, z: usize) -> usize {
        ((c * self.dims[0] + x) * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.offset(c, x, y, z)]
    }

    /// One channel's voxels.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.num_voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.channels, self.dims[0], self.dims[1], self.dims[2]],
            data: TensorData::F32(self.data.clone()),
        }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.dims.len() != 4 {
            return Err(Error::shape(alloc::format!("volume tensor must be [C, X, Y, Z], got {:?}", t.dims)));
        }
        let dims = [t.dims[1], t.dims[2], t.dims[3]];
        Volume::new(t.dims[0], dims, t.into_f32()?)
    }
}

/// A `C × X × Y` bird's-eye-view plane.
#[derive(Debug, Clone, PartialEq)]
pub struct BevFeature {
    channels: usize,
    dims: [usize; 2],
    data: Vec<f32>,
}

impl BevFeature {
    pub fn new(channels: usize, dims: [usize; 2], data: Vec<f32>) -> Result<Self> {
        if channels * dims[0] * dims[1] != data.len() {
            return Err(Error::shape(alloc::format!(
                "BEV {channels}x{dims:?} needs {} values, got {}",
                channels * dims[0] * dims[1],
                data.len()
            )));
        }
        Ok(BevFeature { channels, dims, data })
    }

    pub fn zeros(channels: usize, dims: [usize; 2]) -> Self {
        BevFeature { channels, dims, data: vec![0.0; channels * dims[0] * dims[1]] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.dims[0] + x) * self.dims[1] + y
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[self.offset(c, x, y)]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor { dims: vec![self.channels, self.dims[0], self.dims[1]], data: TensorData::F32(self.data.clone()) }
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        if t.dims.len() != 3 {
            return Err(Error::shape(alloc::format!("BEV tensor must be [C, X, Y], got {:?}", t.dims)));
        }
        let dims = [t.dims[1], t.dims[2]];
        BevFeature::new(t.dims[0], dims, t.into_f32()?)
    }
}
