//! Encoder checkpoints.
//!
//! Layout: 8-byte magic, a little-endian `u64` header length, a JSON header,
//! then one f64 binary matrix block per parameter. Header offsets are relative
//! to the first byte after the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::numkit::{read_dense_from, write_dense_to, DenseMatrix, Precision};

const MAGIC: &[u8; 8] = b"XGOALCK1";

#[derive(Serialize, Deserialize)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    w: Block,
    w_self: Block,
    bias: Block,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    seed: u64,
    epoch: usize,
    layers: Vec<LayerEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub epoch: usize,
    pub layers: Vec<(String, EncoderParams)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let mut entries = Vec::with_capacity(self.layers.len());
        let push = |m: &DenseMatrix, body: &mut Vec<u8>| {
            let block = Block {
                offset: body.len(),
                rows: m.rows(),
                cols: m.cols(),
            };
            write_dense_to(body, m, Precision::F64).expect("writing to memory");
            block
        };
        for (name, p) in &self.layers {
            let bias = DenseMatrix::from_vec(1, p.bias.len(), p.bias.clone()).expect("finite bias");
            entries.push(LayerEntry {
                name: name.clone(),
                w: push(&p.w, &mut body),
                w_self: push(&p.w_self, &mut body),
                bias: push(&bias, &mut body),
            });
        }
        let header = serde_json::to_vec(&Header {
            seed: self.seed,
            epoch: self.epoch,
            layers: entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err("not a checkpoint file (bad magic)".into());
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or("truncated header")?;
        let header: Header = serde_json::from_slice(&bytes[16..body_start]).map_err(|e| format!("header: {e}"))?;
        let body = &bytes[body_start..];
        let read = |b: &Block, what: &str| -> std::result::Result<DenseMatrix, String> {
            let slice = body
                .get(b.offset..)
                .ok_or_else(|| format!("{what}: offset out of range"))?;
            let (m, _) = read_dense_from(slice, Some(Precision::F64)).map_err(|e| format!("{what}: {e}"))?;
            if m.shape() != (b.rows, b.cols) {
                return Err(format!("{what}: shape {:?} disagrees with header", m.shape()));
            }
            Ok(m)
        };
        let mut layers = Vec::with_capacity(header.layers.len());
        for e in &header.layers {
            let params = EncoderParams {
                w: read(&e.w, &format!("{}.w", e.name))?,
                w_self: read(&e.w_self, &format!("{}.w_self", e.name))?,
                bias: read(&e.bias, &format!("{}.bias", e.name))?.into_vec(),
            };
            params.validate().map_err(|err| format!("{}: {err}", e.name))?;
            layers.push((e.name.clone(), params));
        }
        Ok(Self {
            seed: header.seed,
            epoch: header.epoch,
            layers,
        })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|msg| Error::load(path, 0, msg))
}
