//! Model checkpoint file.
//!
//! Layout: magic `MLP1`, `u32` little-endian header length, a JSON header describing the
//! dimensions, taxonomy and training config, then every parameter tensor as raw
//! little-endian binary64 values in the order listed by the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::MlpParams;
use super::TrainConfig;
use crate::data::Taxonomy;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLP1";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub taxonomy: Taxonomy,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    input_dim: usize,
    hidden: [usize; 2],
    num_classes: usize,
    adapter: bool,
    taxonomy_hash: String,
    taxonomy: Taxonomy,
    config: TrainConfig,
    tensors: Vec<TensorInfo>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    ck.params.validate()?;
    if ck.taxonomy.k() != ck.params.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: ck.taxonomy.k(),
            got: ck.params.num_classes(),
        });
    }
    let (h1, h2) = ck.params.hidden();
    let tensors = ck.params.tensors();
    let header = Header {
        version: FORMAT_VERSION,
        input_dim: ck.params.input_dim(),
        hidden: [h1, h2],
        num_classes: ck.params.num_classes(),
        adapter: ck.params.adapter.is_some(),
        taxonomy_hash: ck.taxonomy.hash(),
        taxonomy: ck.taxonomy.clone(),
        config: ck.config.clone(),
        tensors: tensors
            .iter()
            .map(|(name, _, t)| TensorInfo {
                name: name.clone(),
                len: t.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 8 * tensors.iter().map(|t| t.2.len()).sum::<usize>());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, _, t) in &tensors {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(err("bad magic, not an MLP1 checkpoint".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(err("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| err(format!("bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(err(format!("unsupported checkpoint version {}", header.version)));
    }
    if header.taxonomy.hash() != header.taxonomy_hash {
        return Err(err("taxonomy hash mismatch".into()));
    }

    let [h1, h2] = header.hidden;
    let mut params = MlpParams::zeros(header.input_dim, h1, h2, header.num_classes, header.adapter);
    let mut payload = &body[header_len..];
    {
        let expected = params.tensors();
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|((name, _, t), info)| *name != info.name || t.len() != info.len)
        {
            return Err(err("tensor table does not match the declared dimensions".into()));
        }
    }
    for (_, t) in params.tensors_mut() {
        let need = t.len() * 8;
        if payload.len() < need {
            return Err(err("truncated parameter payload".into()));
        }
        for (v, chunk) in t.iter_mut().zip(payload[..need].chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        payload = &payload[need..];
    }
    if !payload.is_empty() {
        return Err(err(format!("{} trailing bytes", payload.len())));
    }
    params.validate().map_err(|e| err(e.to_string()))?;
    if header.taxonomy.k() != params.num_classes() {
        return Err(err("taxonomy size differs from the output layer".into()));
    }
    Ok(Checkpoint {
        params,
        taxonomy: header.taxonomy,
        config: header.config,
    })
}

pub fn write_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes, path)
}
