//! `CKP1` checkpoint files.
//!
//! Layout: magic, `u32` header length, JSON header (network config, seed,
//! class count, free-form training metadata), `u32` tensor count, then per
//! tensor `u32` name length, name, `u32` rank, `u32` dims, `f64` data; CRC32
//! trailer over everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ModelParams, NetworkConfig};
use crate::bytes::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: NetworkConfig,
    pub seed: u64,
    pub classes: usize,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub struct Checkpoint {
    pub params: ModelParams,
    pub metadata: serde_json::Value,
}

pub fn checkpoint_bytes(params: &ModelParams, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        config: params.config.clone(),
        seed: params.seed,
        classes: params.config.classes,
        metadata: metadata.clone(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut w = Writer::with_capacity(16 + header.len() + 8 * params.count());
    w.bytes(MAGIC)
        .u32(bytes::to_u32(header.len(), "header length")?)
        .bytes(&header)
        .u32(bytes::to_u32(params.tensors().len(), "tensor count")?);
    for (name, t) in params.named() {
        w.u32(bytes::to_u32(name.len(), "name length")?).bytes(name.as_bytes());
        w.u32(t.rank() as u32);
        for &d in t.shape() {
            w.u32(bytes::to_u32(d, "extent")?);
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    Ok(w.finish_with_crc())
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::checked(buf)?;
    r.magic(MAGIC)?;
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    if header.classes != header.config.classes {
        return Err(Error::Format("class count disagrees with network config".into()));
    }
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > crate::tensor::MAX_RANK {
            return Err(Error::Format(format!("tensor {name:?} has rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n.checked_mul(8).map_or(true, |b| b > r.remaining()) {
            return Err(Error::Format(format!("tensor {name:?} is truncated")));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        named.push((name, Tensor::from_vec(&shape, data)?));
    }
    r.expect_end()?;
    let params = ModelParams::from_named(header.config, header.seed, named)
        .map_err(|e| Error::Format(format!("checkpoint does not match its config: {e}")))?;
    Ok(Checkpoint {
        params,
        metadata: header.metadata,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, metadata: &serde_json::Value) -> Result<()> {
    bytes::write_file(path, &checkpoint_bytes(params, metadata)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&bytes::read_file(path)?).map_err(|e| e.in_file(path))
}

/// Load for fine-tuning: keep every layer except the classifier head, which is
/// re-initialized for `classes` outputs. The input geometry must match `input`.
pub fn load_for_transfer(path: &Path, input: [usize; 4], classes: usize, seed: u64) -> Result<ModelParams> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.params.config.input != input {
        return Err(Error::Geometry(format!(
            "checkpoint expects inputs {:?}, data is {input:?}",
            ckpt.params.config.input
        )));
    }
    ckpt.params.with_new_head(classes, seed)
}
