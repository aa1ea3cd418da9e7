//! Binary checkpoint format: magic bytes `DWDN`, a u32 format version, a
//! topology line, then a tensor manifest (name, dtype, shape) followed by
//! little-endian 32-bit float payloads in manifest order. Optimizer state
//! travels in the same container under `opt.*` names and is ignored by
//! inference loads.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::nn::{Model, Topology};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DWDN";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serialized model container: named f32 tensors plus the topology header.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerWeights {
    pub version: u32,
    pub topology: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl RefinerWeights {
    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, s, d)| (s.as_slice(), d.as_slice()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.topology.len() as u32).to_le_bytes());
        out.extend_from_slice(self.topology.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, _) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
        }
        for (_, _, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<RefinerWeights> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::format("bad magic bytes; not a weights file"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported weights format version {version}"
            )));
        }
        let topo_len = r.u32()? as usize;
        let topology = String::from_utf8(r.take(topo_len)?.to_vec())
            .map_err(|_| Error::format("topology header is not utf-8"))?;
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::format("tensor name is not utf-8"))?;
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::format(format!("unsupported dtype tag {dtype}")));
            }
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            manifest.push((name, shape));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, shape) in manifest {
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(format!(
                    "tensor `{name}` contains non-finite values"
                )));
            }
            tensors.push((name, shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after tensor payloads"));
        }
        Ok(RefinerWeights {
            version,
            topology,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<RefinerWeights> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        RefinerWeights::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("weights file truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Quantize a model (and optional extra tensors such as optimizer state)
/// into the file container.
pub fn pack_model(model: &Model, extra: &[(String, Vec<usize>, Vec<f32>)]) -> RefinerWeights {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = model
        .names()
        .iter()
        .zip(&model.params)
        .map(|(n, t)| {
            (
                n.clone(),
                t.shape.clone(),
                t.data.iter().map(|&v| v as f32).collect(),
            )
        })
        .collect();
    tensors.extend_from_slice(extra);
    RefinerWeights {
        version: FORMAT_VERSION,
        topology: model.topo.encode(),
        tensors,
    }
}

/// Rebuild a model from a container, ignoring `opt.*` entries.
pub fn unpack_model(weights: &RefinerWeights) -> Result<Model> {
    let topo = Topology::decode(&weights.topology)?;
    let mut named = HashMap::new();
    for (name, shape, data) in &weights.tensors {
        if name.starts_with("opt.") {
            continue;
        }
        named.insert(
            name.clone(),
            Tensor::from_vec(shape, data.iter().map(|&v| v as f64).collect())?,
        );
    }
    Model::from_named_tensors(topo, named)
}
