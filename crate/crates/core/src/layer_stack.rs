//! Checkpoint container and layer-stacking surgery.
//!
//! Layer tensors are named `block.<i>.<param>`. Growing clones every tensor
//! of the top layer into a new layer above it and leaves all other tensors
//! untouched.
//!
//! Container layout: `u64` little-endian header length, the JSON header, then
//! the raw little-endian `f32` payload. Header offsets are byte offsets into
//! the payload.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curriculum::CurriculumPlan;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "currikit-ckpt-v1";
pub const DEFAULT_INITIAL_LAYERS: usize = 1;
pub const DEFAULT_MAX_LAYERS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Manifest(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: usize,
    pub step: u64,
    /// Tensors whose optimizer moments start from zero (set by `grow`).
    #[serde(default)]
    pub optimizer_reset: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    layer_count: usize,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

/// Splits `block.<i>.<param>` into `(i, param)`. Other names give `Ok(None)`.
pub fn parse_layer_name(name: &str) -> Result<Option<(usize, &str)>> {
    let Some(rest) = name.strip_prefix("block.") else {
        return Ok(None);
    };
    let (idx, param) = rest
        .split_once('.')
        .ok_or_else(|| Error::Manifest(format!("layer tensor {name:?} lacks a parameter name")))?;
    if param.is_empty() || idx.is_empty() || !idx.bytes().all(|b| b.is_ascii_digit()) || (idx.len() > 1 && idx.starts_with('0')) {
        return Err(Error::Manifest(format!("malformed layer tensor name {name:?}")));
    }
    let i = idx
        .parse()
        .map_err(|_| Error::Manifest(format!("malformed layer index in {name:?}")))?;
    Ok(Some((i, param)))
}

pub fn layer_name(i: usize, param: &str) -> String {
    format!("block.{i}.{param}")
}

impl Checkpoint {
    pub fn new(tensors: BTreeMap<String, Tensor>, meta: CheckpointMeta) -> Result<Self> {
        let ck = Self { tensors, meta };
        ck.layer_count()?;
        Ok(ck)
    }

    /// Number of layers, after checking indices are dense and every layer
    /// has the same parameters with the same shapes as the one below it.
    pub fn layer_count(&self) -> Result<usize> {
        let mut layers: BTreeMap<usize, BTreeMap<&str, &Vec<usize>>> = BTreeMap::new();
        for (name, t) in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Manifest(format!("tensor {name} has inconsistent shape")));
            }
            if let Some((i, p)) = parse_layer_name(name)? {
                layers.entry(i).or_default().insert(p, &t.shape);
            }
        }
        for (expect, (&i, params)) in layers.iter().enumerate() {
            if i != expect {
                return Err(Error::Manifest(format!("layer indices are not dense: missing block.{expect}")));
            }
            if i > 0 && *params != layers[&(i - 1)] {
                return Err(Error::Manifest(format!("layer {i} is not shape-compatible with layer {}", i - 1)));
            }
        }
        Ok(layers.len())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn layer_param_count(&self, i: usize) -> Result<usize> {
        let mut n = 0;
        for (name, t) in &self.tensors {
            if parse_layer_name(name)?.is_some_and(|(l, _)| l == i) {
                n += t.numel();
            }
        }
        Ok(n)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layer_count = self.layer_count()?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let bytes = 4 * t.numel() as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
                bytes,
            });
            offset += bytes;
        }
        let header = serde_json::to_vec(&Header {
            format: CHECKPOINT_FORMAT.into(),
            layer_count,
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::format("checkpoint shorter than its length prefix", 0));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let payload_start = 8usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format("checkpoint header runs past end of file", 8))?;
        let header: Header = serde_json::from_slice(&bytes[8..payload_start])?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::format(format!("unknown checkpoint format {:?}", header.format), 8));
        }
        let payload = &bytes[payload_start..];
        let mut tensors = BTreeMap::new();
        let mut expected_end = 0u64;
        for e in header.tensors {
            let end = e.offset + e.bytes;
            if e.offset != expected_end || end as usize > payload.len() || e.bytes % 4 != 0 {
                return Err(Error::format(
                    format!("tensor {} has a bad payload range", e.name),
                    (payload_start as u64) + e.offset,
                ));
            }
            expected_end = end;
            let data = payload[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(e.name, Tensor::new(e.shape, data)?);
        }
        if expected_end as usize != payload.len() {
            return Err(Error::format("trailing bytes after tensor payload", payload_start as u64 + expected_end));
        }
        let ck = Self::new(tensors, header.meta)?;
        if ck.layer_count()? != header.layer_count {
            return Err(Error::Manifest(format!(
                "header declares {} layers, tensors define {}",
                header.layer_count,
                ck.layer_count()?
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Adds layer `L` as a bit-identical copy of layer `L-1`.
pub fn grow(ckpt: &Checkpoint) -> Result<Checkpoint> {
    let l = ckpt.layer_count()?;
    if l == 0 {
        return Err(Error::Manifest("checkpoint has no layers to clone".into()));
    }
    let mut out = ckpt.clone();
    let mut added = BTreeSet::new();
    for (name, t) in &ckpt.tensors {
        if let Some((i, p)) = parse_layer_name(name)? {
            if i == l - 1 {
                let new = layer_name(l, p);
                added.insert(new.clone());
                out.tensors.insert(new, t.clone());
            }
        }
    }
    out.meta.optimizer_reset = added.into_iter().collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrowthConfig {
    pub initial_layers: usize,
    pub max_layers: usize,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            initial_layers: DEFAULT_INITIAL_LAYERS,
            max_layers: DEFAULT_MAX_LAYERS,
        }
    }
}

/// Layer count for each stage (index 0 = stage 1): one more layer per stage,
/// saturating at `max_layers`.
pub fn growth_schedule(plan: &CurriculumPlan, cfg: &GrowthConfig) -> Vec<usize> {
    layers_per_stage(plan.stages.len(), cfg)
}

pub fn layers_per_stage(n_stages: usize, cfg: &GrowthConfig) -> Vec<usize> {
    (0..n_stages)
        .map(|s| (cfg.initial_layers + s).min(cfg.max_layers.max(cfg.initial_layers)))
        .collect()
}
