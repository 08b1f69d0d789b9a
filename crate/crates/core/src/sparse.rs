//! Compressed-sparse-row matrices and the dense × sparse product.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "OVTC" | version u32 = 1 | rows u64 | cols u64 | nnz u64
//! indptr u64[rows + 1] | indices u32[nnz] | values f32[nnz]
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub const CSR_MAGIC: &[u8; 4] = b"OVTC";
pub const CSR_VERSION: u32 = 1;
/// Size of the fixed part of the serialized header in bytes.
pub const CSR_HEADER_BYTES: usize = 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<u64>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

/// Row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryStats {
    pub dense_bytes: u128,
    pub csr_bytes: u64,
    pub ratio: f64,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::shape(alloc::format!("dense data has {} values, expected {rows}x{cols}", data.len())));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("dense matrix entries must be finite"));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }
}

impl CsrMatrix {
    /// Builds from raw parts, checking every invariant.
    pub fn from_parts(rows: usize, cols: usize, indptr: Vec<u64>, indices: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let m = CsrMatrix { rows, cols, indptr, indices, values };
        m.check_invariants().map_err(Error::Format)?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        check_cols(cols)?;
        Ok(CsrMatrix { rows, cols, indptr: vec![0; rows + 1], indices: Vec::new(), values: Vec::new() })
    }

    pub fn identity(n: usize) -> Result<Self> {
        check_cols(n)?;
        Ok(CsrMatrix {
            rows: n,
            cols: n,
            indptr: (0..=n as u64).collect(),
            indices: (0..n as u32).collect(),
            values: vec![1.0; n],
        })
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Triplets are put in a canonical order (row, column, value) before
    /// summation, so the output does not depend on input order.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f32)]) -> Result<Self> {
        check_cols(cols)?;
        for &(r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::invalid(alloc::format!("triplet ({r}, {c}) outside {rows}x{cols}")));
            }
            if !v.is_finite() {
                return Err(Error::invalid(alloc::format!("triplet ({r}, {c}) has non-finite value")));
            }
        }
        let mut sorted: Vec<(usize, usize, f32)> = triplets.to_vec();
        sorted.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));

        let mut indptr = vec![0u64; rows + 1];
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let (r, c, _) = sorted[i];
            let mut acc = 0.0f64;
            while i < sorted.len() && sorted[i].0 == r && sorted[i].1 == c {
                acc += sorted[i].2 as f64;
                i += 1;
            }
            indices.push(c as u32);
            values.push(acc as f32);
            indptr[r + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(CsrMatrix { rows, cols, indptr, indices, values })
    }

    /// Transposes column-compressed parts into CSR.
    ///
    /// `colptr` has `cols + 1` entries; row ids within each column must be
    /// strictly increasing. Filling rows in column order keeps each row's
    /// column ids sorted.
    pub(crate) fn from_csc(rows: usize, cols: usize, colptr: &[usize], row_idx: &[u32], vals: &[f32]) -> Result<Self> {
        check_cols(cols)?;
        debug_assert_eq!(colptr.len(), cols + 1);
        let nnz = row_idx.len();
        let mut indptr = vec![0u64; rows + 1];
        for &r in row_idx {
            indptr[r as usize + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        let mut next: Vec<u64> = indptr[..rows].to_vec();
        let mut indices = vec![0u32; nnz];
        let mut values = vec![0f32; nnz];
        for c in 0..cols {
            for e in colptr[c]..colptr[c + 1] {
                let r = row_idx[e] as usize;
                let slot = next[r] as usize;
                indices[slot] = c as u32;
                values[slot] = vals[e];
                next[r] += 1;
            }
        }
        Ok(CsrMatrix { rows, cols, indptr, indices, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[u64] {
        &self.indptr
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Column ids and values of row `r`.
    pub fn row(&self, r: usize) -> (&[u32], &[f32]) {
        let (a, b) = (self.indptr[r] as usize, self.indptr[r + 1] as usize);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&(c as u32)) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// Per-column sums, accumulated in `f64`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0f64; self.cols];
        for (&c, &v) in self.indices.iter().zip(&self.values) {
            sums[c as usize] += v as f64;
        }
        sums
    }

    /// Number of stored entries per column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.cols];
        for &c in &self.indices {
            counts[c as usize] += 1;
        }
        counts
    }

    fn check_invariants(&self) -> core::result::Result<(), alloc::string::String> {
        if self.cols as u64 > u32::MAX as u64 {
            return Err(alloc::format!("column count {} does not fit 32-bit indices", self.cols));
        }
        if self.indptr.len() != self.rows + 1 {
            return Err("indptr length must be rows + 1".into());
        }
        if self.indices.len() != self.values.len() {
            return Err("indices and values differ in length".into());
        }
        if self.indptr[0] != 0 {
            return Err("indptr[0] must be 0".into());
        }
        if self.indptr.windows(2).any(|w| w[1] < w[0]) {
            return Err("indptr must be non-decreasing".into());
        }
        if self.indptr[self.rows] != self.values.len() as u64 {
            return Err("indptr[rows] must equal nnz".into());
        }
        for r in 0..self.rows {
            let (idx, _) = self.row(r);
            if idx.windows(2).any(|w| w[1] <= w[0]) {
                return Err(alloc::format!("row {r} column ids not strictly increasing"));
            }
            if idx.last().is_some_and(|&c| c as usize >= self.cols) {
                return Err(alloc::format!("row {r} has a column id out of range"));
            }
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err("values must be finite".into());
        }
        Ok(())
    }

    pub fn serialized_len(&self) -> usize {
        CSR_HEADER_BYTES + (self.rows + 1) * 8 + self.nnz() * 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(CSR_MAGIC);
        out.extend_from_slice(&CSR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for p in &self.indptr {
            out.extend_from_slice(&p.to_le_bytes());
        }
        for i in &self.indices {
            out.extend_from_slice(&i.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        if rd.take(4)? != CSR_MAGIC {
            return Err(Error::format("bad magic, expected OVTC"));
        }
        let version = rd.u32()?;
        if version != CSR_VERSION {
            return Err(Error::format(alloc::format!("unsupported OVTC version {version}")));
        }
        let rows = rd.len_u64()?;
        let cols = rd.len_u64()?;
        let nnz = rd.len_u64()?;
        let expected = rows
            .checked_add(1)
            .and_then(|r| r.checked_mul(8))
            .and_then(|a| nnz.checked_mul(8).and_then(|b| a.checked_add(b)))
            .ok_or_else(|| Error::format("header sizes overflow"))?;
        if rd.remaining() != expected {
            return Err(Error::format(alloc::format!(
                "payload is {} bytes, header implies {expected}",
                rd.remaining()
            )));
        }
        let indptr = (0..=rows).map(|_| rd.u64()).collect::<Result<Vec<_>>>()?;
        let indices = (0..nnz).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?;
        let values = (0..nnz).map(|_| rd.u32().map(f32::from_bits)).collect::<Result<Vec<_>>>()?;
        CsrMatrix::from_parts(rows, cols, indptr, indices, values)
    }

    pub fn memory_stats(&self) -> MemoryStats {
        let dense_bytes = self.rows as u128 * self.cols as u128 * 4;
        let csr_bytes = self.serialized_len() as u64;
        let ratio = if dense_bytes == 0 { 0.0 } else { csr_bytes as f64 / dense_bytes as f64 };
        MemoryStats { dense_bytes, csr_bytes, ratio }
    }
}

fn check_cols(cols: usize) -> Result<()> {
    if cols as u64 > u32::MAX as u64 {
        return Err(Error::invalid(alloc::format!("{cols} columns do not fit 32-bit indices")));
    }
    Ok(())
}

/// `dense (C×R) · csr (R×K)`, accumulated in `f64`.
///
/// Each output element sums its terms in increasing `r`, so the result is the
/// same bit pattern for any thread count.
pub fn spmm(dense: &DenseMatrix, csr: &CsrMatrix) -> Result<DenseMatrix> {
    if dense.cols != csr.rows {
        return Err(Error::shape(alloc::format!(
            "dense is {}x{} but sparse is {}x{}",
            dense.rows,
            dense.cols,
            csr.rows,
            csr.cols
        )));
    }
    let (c_rows, k) = (dense.rows, csr.cols);
    let mut out = vec![0f32; c_rows * k];
    if k == 0 {
        return Ok(DenseMatrix { rows: c_rows, cols: k, data: out });
    }
    crate::par::for_each_chunk_mut(&mut out, k, |c, out_row| {
        let mut acc = vec![0f64; k];
        let x = &dense.data[c * dense.cols..(c + 1) * dense.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let xr = xr as f64;
            let (idx, vals) = csr.row(r);
            for (&col, &v) in idx.iter().zip(vals) {
                acc[col as usize] += xr * v as f64;
            }
        }
        for (o, a) in out_row.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Ok(DenseMatrix { rows: c_rows, cols: k, data: out })
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format("truncated stream"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn len_u64(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format("length does not fit in memory"))
    }
}
