//! Self-describing binary checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SIAMCKPT"
//! version  u32      1
//! hlen     u64      length of the JSON header
//! header   hlen     JSON: configs, step, metadata, tensor directory
//! payload           f32 little-endian values, tensors back to back
//! ```
//!
//! The tensor directory lists every parameter by canonical name with its
//! shape and element offset into the payload. Optimiser moments, when
//! present, are stored as `adam.first.<name>` / `adam.second.<name>`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CropGeometry;

use super::{BackboneConfig, Network};

const MAGIC: &[u8; 8] = b"SIAMCKPT";
const VERSION: u32 = 1;

/// Adam moments with the same shapes as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub updates: u64,
    pub first: Network<f32>,
    pub second: Network<f32>,
}

impl AdamState {
    pub fn new(net: &Network<f32>) -> Self {
        Self {
            updates: 0,
            first: net.zeros_like(),
            second: net.zeros_like(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub geometry: CropGeometry,
    pub step: u64,
    pub network: Network<f32>,
    pub optimizer: Option<AdamState>,
    /// Free-form JSON (run configuration snapshot and the like).
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    backbone: BackboneConfig,
    geometry: CropGeometry,
    step: u64,
    optimizer_updates: Option<u64>,
    metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut payload: Vec<f32> = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &[f32]| {
            entries.push(TensorEntry {
                name,
                shape,
                offset: payload.len(),
                len: data.len(),
            });
            payload.extend_from_slice(data);
        };
        for (name, shape, data) in self.network.named_tensors() {
            push(name, shape, data);
        }
        if let Some(opt) = &self.optimizer {
            for (prefix, net) in [("adam.first.", &opt.first), ("adam.second.", &opt.second)] {
                for (name, shape, data) in net.named_tensors() {
                    push(format!("{prefix}{name}"), shape, data);
                }
            }
        }
        let header = Header {
            backbone: self.network.config.clone(),
            geometry: self.geometry,
            step: self.step,
            optimizer_updates: self.optimizer.as_ref().map(|o| o.updates),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let payload = &bytes[20 + hlen..];
        if !payload.len().is_multiple_of(4) {
            return Err(bad("payload is not a whole number of f32 values"));
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let lookup = |name: &str| -> Result<&[f32]> {
            let e = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
            values
                .get(e.offset..e.offset + e.len)
                .ok_or_else(|| bad(&format!("tensor {name} out of range")))
        };
        let fill = |net: &mut Network<f32>, prefix: &str| -> Result<()> {
            for (name, buf) in net.named_tensors_mut() {
                let src = lookup(&format!("{prefix}{name}"))?;
                if src.len() != buf.len() {
                    return Err(bad(&format!("tensor {name}: expected {} values, found {}", buf.len(), src.len())));
                }
                buf.copy_from_slice(src);
            }
            Ok(())
        };
        let mut network = Network::<f32>::new(&header.backbone)?;
        fill(&mut network, "")?;
        let optimizer = match header.optimizer_updates {
            Some(updates) => {
                let mut first = network.zeros_like();
                let mut second = network.zeros_like();
                fill(&mut first, "adam.first.")?;
                fill(&mut second, "adam.second.")?;
                Some(AdamState { updates, first, second })
            }
            None => None,
        };
        Ok(Self {
            geometry: header.geometry,
            step: header.step,
            network,
            optimizer,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
