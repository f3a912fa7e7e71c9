//! Checkpoint files.
//!
//! ```text
//! meltpool-checkpoint <version>\n
//! header-bytes <n>\n
//! <n bytes of JSON header>
//! <little-endian f32 parameters>
//! ```
//!
//! The JSON header carries the [`NetworkSpec`], the seed and free-form
//! training metadata. Parameters follow in layer order, weights before
//! biases, row-major within each tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec};
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "meltpool-checkpoint";

/// One epoch of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: NetworkSpec,
    seed: u64,
    param_count: usize,
    metadata: serde_json::Value,
}

/// Serialized network parameters plus the header describing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub metadata: serde_json::Value,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, seed: u64, metadata: serde_json::Value) -> Self {
        Checkpoint {
            spec: net.spec().clone(),
            seed,
            metadata,
            params: net.flat_params().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Rebuild the network (parameters widened back to `f64`).
    pub fn to_network(&self) -> Result<Network> {
        let mut params = Vec::new();
        let mut off = 0;
        for shape in self.spec.layers.iter().flat_map(|l| l.param_shapes()) {
            let n: usize = shape.iter().product();
            let slice = self.params.get(off..off + n).ok_or_else(|| {
                Error::dim("Checkpoint::to_network", "parameter count", self.spec.param_count(), self.params.len())
            })?;
            params.push(Tensor::new(&shape, slice.iter().map(|&v| f64::from(v)).collect())?);
            off += n;
        }
        if off != self.params.len() {
            return Err(Error::dim("Checkpoint::to_network", "parameter count", off, self.params.len()));
        }
        Network::new(self.spec.clone(), params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            seed: self.seed,
            param_count: self.params.len(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_string_pretty(&header).expect("header serializes");
        let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\nheader-bytes {}\n", json.len()).into_bytes();
        out.extend_from_slice(json.as_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let malformed = |detail: String| Error::Malformed {
            path: path.into(),
            what: "checkpoint",
            detail,
        };
        let (line1, rest) = split_line(bytes).ok_or_else(|| malformed("missing magic line".into()))?;
        let version = line1
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::BadMagic { path: path.into() })?;
        let version: u32 = version.parse().map_err(|_| malformed(format!("bad version {version:?}")))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.into(),
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (line2, rest) = split_line(rest).ok_or_else(|| malformed("missing header length".into()))?;
        let n: usize = line2
            .strip_prefix("header-bytes ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| malformed(format!("bad header length line {line2:?}")))?;
        if rest.len() < n {
            return Err(Error::Truncated {
                path: path.into(),
                found: rest.len(),
                expected: n,
            });
        }
        let header: Header =
            serde_json::from_slice(&rest[..n]).map_err(|e| malformed(format!("header: {e}")))?;
        let blob = &rest[n..];
        let expected = header.param_count * 4;
        if blob.len() != expected {
            return Err(Error::Truncated {
                path: path.into(),
                found: blob.len(),
                expected,
            });
        }
        if header.param_count != header.spec.param_count() {
            return Err(malformed(format!(
                "header declares {} parameters but the network needs {}",
                header.param_count,
                header.spec.param_count()
            )));
        }
        let params = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Checkpoint {
            spec: header.spec,
            seed: header.seed,
            metadata: header.metadata,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(path, &bytes)
    }
}

fn split_line(bytes: &[u8]) -> Option<(&str, &[u8])> {
    let i = bytes.iter().position(|&b| b == b'\n')?;
    Some((std::str::from_utf8(&bytes[..i]).ok()?, &bytes[i + 1..]))
}
