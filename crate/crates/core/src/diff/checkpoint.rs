//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0   8 bytes   magic "DSDIORA\0"
//! 8   u32       container version
//! 12  u32       header length H
//! 16  H bytes   UTF-8 JSON: {"config_hash": .., "meta": .., "tensors": [{"name", "shape"}, ..]}
//! ..            tensor payloads in header order, each as f64 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::corpus::create;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSDIORA\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Named tensors plus free-form metadata and the hash of the producing config.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = Header {
            config_hash: self.config_hash.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Invalid(e.to_string()))?;
        let io = |e| Error::io(path, e);
        // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
        let tmp = path.with_extension("tmp");
        {
            let mut w = create(&tmp)?;
            w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
            w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&header).map_err(io)?;
            for (_, t) in &self.tensors {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
            w.flush().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut r = bytes.as_slice();
        let bad = |m: &str| Error::Incompatible(format!("{}: {m}", path.display()));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated"))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported container version {version}")));
        }
        r.read_exact(&mut word).map_err(|_| bad("truncated"))?;
        let hlen = u32::from_le_bytes(word) as usize;
        if r.len() < hlen {
            return Err(bad("truncated header"));
        }
        let (hbytes, mut rest) = r.split_at(hlen);
        let header: Header = serde_json::from_slice(hbytes).map_err(|e| bad(&e.to_string()))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if rest.len() < 8 * n {
                return Err(bad("truncated tensor payload"));
            }
            let (chunk, tail) = rest.split_at(8 * n);
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((entry.name, Tensor::from_vec(&entry.shape, data)?));
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(Checkpoint {
            config_hash: header.config_hash,
            meta: header.meta,
            tensors,
        })
    }
}
