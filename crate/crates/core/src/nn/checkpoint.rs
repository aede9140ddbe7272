//! Checkpoint container: a JSON header followed by a little-endian `f64`
//! payload.
//!
//! Layout:
//!
//! ```text
//! b"ULTRCKPT"                 8-byte magic
//! u64 (LE)                    header length in bytes
//! header                      UTF-8 JSON (see `CheckpointHeader`)
//! f64 (LE) * payload_len      parameters
//! ```
//!
//! Networks are written layer by layer: the weight matrix in row-major
//! `(outputs, inputs)` order, then its bias. Named vectors follow the
//! networks in header order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, Layer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ULTRCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorSpec {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// What the checkpoint holds, e.g. `two_tower` or `policy_neural`.
    pub kind: String,
    pub nets: Vec<NetSpec>,
    pub vectors: Vec<VectorSpec>,
    pub payload_len: usize,
    /// Free-form metadata: seeds, training configuration, variant tags.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub payload: Vec<f64>,
}

/// Incrementally assembles a checkpoint.
#[derive(Debug)]
pub struct CheckpointBuilder {
    header: CheckpointHeader,
    payload: Vec<f64>,
}

impl CheckpointBuilder {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        CheckpointBuilder {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: kind.to_string(),
                nets: Vec::new(),
                vectors: Vec::new(),
                payload_len: 0,
                meta,
            },
            payload: Vec::new(),
        }
    }

    pub fn net(mut self, name: &str, net: &DenseNet) -> Self {
        self.header.nets.push(NetSpec {
            name: name.to_string(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerSpec {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                })
                .collect(),
        });
        self.payload.extend(net.flat_params());
        self
    }

    pub fn vector(mut self, name: &str, values: &[f64]) -> Self {
        self.header.vectors.push(VectorSpec {
            name: name.to_string(),
            len: values.len(),
        });
        self.payload.extend_from_slice(values);
        self
    }

    pub fn finish(mut self) -> Checkpoint {
        self.header.payload_len = self.payload.len();
        Checkpoint {
            header: self.header,
            payload: self.payload,
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing ULTRCKPT magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < header_len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("decoding header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let payload_bytes = &body[header_len..];
        if payload_bytes.len() != 8 * header.payload_len {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header declares {} values",
                payload_bytes.len(),
                header.payload_len
            )));
        }
        let payload = payload_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let ckpt = Checkpoint { header, payload };
        let expected: usize = ckpt
            .header
            .nets
            .iter()
            .flat_map(|n| &n.layers)
            .map(|l| l.inputs * l.outputs + l.outputs)
            .chain(ckpt.header.vectors.iter().map(|v| v.len))
            .sum();
        if expected != ckpt.header.payload_len {
            return Err(Error::Checkpoint(format!(
                "tensor specs need {expected} values, payload has {}",
                ckpt.header.payload_len
            )));
        }
        Ok(ckpt)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn offset_of_net(&self, index: usize) -> usize {
        self.header.nets[..index]
            .iter()
            .flat_map(|n| &n.layers)
            .map(|l| l.inputs * l.outputs + l.outputs)
            .sum()
    }

    pub fn net(&self, name: &str) -> Result<DenseNet> {
        let idx = self
            .header
            .nets
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("no network named {name:?}")))?;
        let mut offset = self.offset_of_net(idx);
        let layers = self.header.nets[idx]
            .layers
            .iter()
            .map(|spec| {
                let nw = spec.inputs * spec.outputs;
                let weights = Array2::from_shape_vec(
                    (spec.outputs, spec.inputs),
                    self.payload[offset..offset + nw].to_vec(),
                )
                .expect("shape matches length");
                let bias = Array1::from(self.payload[offset + nw..offset + nw + spec.outputs].to_vec());
                offset += nw + spec.outputs;
                Layer {
                    weights,
                    bias,
                    activation: spec.activation,
                }
            })
            .collect();
        DenseNet::new(layers).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let nets_len = self.offset_of_net(self.header.nets.len());
        let mut offset = nets_len;
        for v in &self.header.vectors {
            if v.name == name {
                return Ok(self.payload[offset..offset + v.len].to_vec());
            }
            offset += v.len;
        }
        Err(Error::Checkpoint(format!("no vector named {name:?}")))
    }
}
