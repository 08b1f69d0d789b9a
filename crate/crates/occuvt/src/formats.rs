//! File IO for OVTC matrices, OVTF tensors and JSON documents. Every write
//! goes to a temporary file in the target directory and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use occuvt_core::tensor::Tensor;
use occuvt_core::CsrMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path) -> CliResult<CsrMatrix> {
    CsrMatrix::from_bytes(&read_bytes(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_matrix(path: &Path, m: &CsrMatrix) -> CliResult<()> {
    write_atomic(path, &m.to_bytes())
}

pub fn read_tensor(path: &Path) -> CliResult<Tensor> {
    Tensor::from_bytes(&read_bytes(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> CliResult<()> {
    write_atomic(path, &t.to_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| CliError::input(format!("{}: invalid JSON: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}
