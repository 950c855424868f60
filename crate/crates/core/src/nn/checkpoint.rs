//! `SPN1` checkpoints.
//!
//! ```text
//! magic          4 bytes   "SPN1"
//! manifest_len   u32 LE
//! manifest       JSON      {"config": NetworkConfig, "tensors": [{"name", "shape"}, ...]}
//! data           f64 LE    every tensor in manifest order, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use super::tensor::Tensor;
use super::NnError;

const MAGIC: &[u8; 4] = b"SPN1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: NetworkConfig,
    tensors: Vec<TensorEntry>,
}

fn malformed(m: impl Into<String>) -> NnError {
    NnError::MalformedCheckpoint(m.into())
}

pub fn checkpoint_to_bytes(net: &Network) -> Vec<u8> {
    let manifest = Manifest {
        config: net.config().clone(),
        tensors: net
            .param_names()
            .into_iter()
            .zip(net.params())
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let n: usize = net.params().iter().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(8 + json.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in net.params() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Network, NnError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(malformed("missing SPN1 magic"));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| malformed("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| malformed(format!("manifest: {e}")))?;
    manifest
        .config
        .validate()
        .map_err(|e| malformed(format!("config: {e}")))?;
    let mut data = &bytes[8 + len..];
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let n = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| malformed("tensor size overflows"))?;
        let nbytes = n
            .checked_mul(8)
            .filter(|&b| b <= data.len())
            .ok_or_else(|| malformed(format!("truncated data for {}", entry.name)))?;
        let values = data[..nbytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[nbytes..];
        params.push(Tensor::from_vec(&entry.shape, values)?);
    }
    if !data.is_empty() {
        return Err(malformed(format!("{} trailing bytes", data.len())));
    }
    let net =
        Network::from_params(manifest.config, params).map_err(|e| malformed(e.to_string()))?;
    let names = net.param_names();
    if names
        .iter()
        .zip(&manifest.tensors)
        .any(|(a, b)| *a != b.name)
    {
        return Err(malformed("tensor names do not match the configuration"));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<(), NnError> {
    fs::write(path, checkpoint_to_bytes(net)).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Network, NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}
