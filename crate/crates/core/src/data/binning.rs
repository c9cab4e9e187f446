use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bucket edges for one numeric feature.
///
/// `n` edges define `n + 1` buckets: everything below the first edge lands in
/// bucket 0, `[e_i, e_{i+1})` is bucket `i + 1`, and everything at or above the
/// last edge lands in bucket `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningSpec {
    edges: Vec<f64>,
}

impl BinningSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Config("bin edges must be finite".into()));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("bin edges not strictly increasing: {edges:?}")));
        }
        Ok(BinningSpec { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn num_buckets(&self) -> usize {
        self.edges.len() + 1
    }
}

pub fn bin_numeric(value: f64, spec: &BinningSpec) -> Result<usize> {
    if value.is_nan() {
        return Err(Error::Input("cannot bin NaN".into()));
    }
    Ok(spec.edges.partition_point(|&e| e <= value))
}
