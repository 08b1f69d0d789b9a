//! Run reports: timings, matrix memory and metric values as JSON.

use std::collections::BTreeMap;

use occuvt_core::projector::BuildStats;
use occuvt_core::CsrMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryReport {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub dense_bytes: u128,
    pub csr_bytes: u64,
    pub ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_hits: Option<u64>,
    /// `hits_histogram[k]` columns received exactly `k` projections.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits_histogram: Option<Vec<u64>>,
}

impl MemoryReport {
    pub fn new(m: &CsrMatrix, stats: Option<&BuildStats>) -> Self {
        let s = m.memory_stats();
        MemoryReport {
            rows: m.rows(),
            cols: m.cols(),
            nnz: m.nnz(),
            dense_bytes: s.dense_bytes,
            csr_bytes: s.csr_bytes,
            ratio: s.ratio,
            total_hits: stats.map(|s| s.total_hits),
            hits_histogram: stats.map(|s| s.hits_histogram.clone()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    /// SHA-256 over the command's inputs; equal inputs give equal digests.
    pub config_digest: String,
    pub timings_ms: BTreeMap<String, f64>,
    pub memory: BTreeMap<String, MemoryReport>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl RunReport {
    pub fn new(command: &str, digest: String) -> Self {
        RunReport {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: digest,
            timings_ms: BTreeMap::new(),
            memory: BTreeMap::new(),
            metrics: BTreeMap::new(),
            details: serde_json::Value::Null,
        }
    }
}

/// Length-prefixed SHA-256 of several byte strings.
pub fn digest_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Minimum and median of repeated measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min_ms: f64,
    pub median_ms: f64,
    pub samples: usize,
}

impl Summary {
    pub fn of(samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let median = match s.len() {
            0 => 0.0,
            n if n % 2 == 1 => s[n / 2],
            n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
        };
        Summary { min_ms: s.first().copied().unwrap_or(0.0), median_ms: median, samples: s.len() }
    }
}
