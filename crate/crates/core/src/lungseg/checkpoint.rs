//! Single-file checkpoint:
//!
//! ```text
//! b"ICUSEG01" | u64 LE header length | JSON header | f32 LE tensor data
//! ```
//!
//! The header holds the `SegmenterConfig` and the ordered tensor names and
//! lengths; the data section is the tensors concatenated in that order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SegmenterConfig, UNet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ICUSEG01";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: SegmenterConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

pub fn save_checkpoint(net: &UNet, path: &Path) -> Result<()> {
    let params = net.named_params();
    let header = Header {
        config: net.config().clone(),
        tensors: params
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.clone(),
                len: p.value.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * net.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, p) in &params {
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<UNet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a segmenter checkpoint",
            path.display()
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut net = UNet::new(&header.config)?;
    let expected: Vec<(String, usize)> = net
        .named_params()
        .into_iter()
        .map(|(n, p)| (n, p.value.len()))
        .collect();
    let stored: Vec<(String, usize)> = header.tensors.iter().map(|t| (t.name.clone(), t.len)).collect();
    if expected != stored {
        return Err(Error::Checkpoint(
            "tensor layout does not match the embedded config".into(),
        ));
    }
    let mut data = &bytes[16 + hlen..];
    let total: usize = stored.iter().map(|(_, l)| l).sum();
    if data.len() != total * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} weight bytes, found {}",
            total * 4,
            data.len()
        )));
    }
    for p in net.params_mut() {
        for v in p.value.iter_mut() {
            *v = f32::from_le_bytes(data[..4].try_into().unwrap());
            data = &data[4..];
        }
    }
    Ok(net)
}
