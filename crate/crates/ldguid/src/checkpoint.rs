//! Checkpoint files.
//!
//! ```text
//! "LDGK" | version: u32 LE | meta_len: u64 LE | meta JSON
//! | per tensor: name_len: u32 LE | name | ndims: u32 LE | dims: u64 LE… | f32 LE payload
//! | CRC32 of every preceding byte: u32 LE
//! ```
//!
//! Tensors are written in name order, so a checkpoint's bytes depend only on
//! its contents.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ldguid_core::backbones::{BackboneArchConfig, BackboneKind, BackboneParams};
use ldguid_core::de::{DeArchConfig, DeParams};
use ldguid_core::optim::{Adam, AdamConfig};
use ldguid_core::params::ParamSet;
use ldguid_core::tensor::Tensor;
use ldguid_core::trainer::{TrainConfig, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LDGK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    De,
    Segmenter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub arch: BackboneArchConfig,
}

/// Training randomness is a pure function of the seed and the number of
/// completed epochs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epochs_completed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub dataset_hash: String,
    pub split: String,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ArtifactKind,
    pub de_arch: Option<DeArchConfig>,
    pub backbone: Option<BackboneSpec>,
    pub train: TrainConfig,
    /// The fully resolved configuration the producing command ran with.
    pub resolved_config: serde_json::Value,
    pub rng: RngState,
    pub provenance: Provenance,
    /// Adam step counters by parameter group.
    pub optimizer_steps: BTreeMap<String, u64>,
    pub history: TrainHistory,
    pub tensor_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

const DE_GROUPS: [&str; 3] = ["encoder", "decoder", "adversary"];

fn de_group<'a>(de: &'a DeParams, group: &str) -> &'a ParamSet<f32> {
    match group {
        "encoder" => &de.encoder,
        "decoder" => &de.decoder,
        _ => &de.adversary,
    }
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self { meta, tensors: BTreeMap::new() }
    }

    pub fn insert_set(&mut self, prefix: &str, set: &ParamSet<f32>) {
        for (name, t) in set.iter() {
            self.tensors.insert(format!("{prefix}.{name}"), t.clone());
        }
        self.meta.tensor_count = self.tensors.len();
    }

    pub fn insert_de(&mut self, de: &DeParams) {
        for g in DE_GROUPS {
            self.insert_set(&format!("de.{g}"), de_group(de, g));
        }
    }

    pub fn insert_adam(&mut self, group: &str, adam: &Adam<f32>) {
        let (m, v) = adam.moments();
        self.insert_set(&format!("opt.{group}.m"), m);
        self.insert_set(&format!("opt.{group}.v"), v);
        self.meta.optimizer_steps.insert(group.to_string(), adam.steps());
    }

    /// Tensors under `prefix.`, with the prefix stripped.
    pub fn param_set(&self, prefix: &str) -> ParamSet<f32> {
        let head = format!("{prefix}.");
        let mut set = ParamSet::new();
        for (name, t) in self.tensors.range(head.clone()..) {
            let Some(rest) = name.strip_prefix(&head) else { break };
            set.insert(rest, t.clone());
        }
        set
    }

    pub fn de_params(&self) -> Result<Option<DeParams>> {
        let Some(arch) = self.meta.de_arch.clone() else { return Ok(None) };
        let de = DeParams {
            encoder: self.param_set("de.encoder"),
            decoder: self.param_set("de.decoder"),
            adversary: self.param_set("de.adversary"),
            arch,
        };
        de.validate()?;
        Ok(Some(de))
    }

    pub fn backbone_params(&self) -> Result<Option<BackboneParams>> {
        let Some(spec) = self.meta.backbone.clone() else { return Ok(None) };
        let bb = BackboneParams { kind: spec.kind, params: self.param_set("backbone"), arch: spec.arch };
        bb.validate()?;
        Ok(Some(bb))
    }

    /// Restores an optimizer group saved by [`Checkpoint::insert_adam`].
    pub fn adam(&self, group: &str, config: AdamConfig) -> Option<Adam<f32>> {
        let step = *self.meta.optimizer_steps.get(group)?;
        Some(Adam::from_parts(config, self.param_set(&format!("opt.{group}.m")), self.param_set(&format!("opt.{group}.v")), step))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = self.meta.clone();
        meta.tensor_count = self.tensors.len();
        let meta_json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::with_capacity(meta_json.len() + 64 + 4 * self.tensors.values().map(Tensor::len).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta_json);
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::CorruptChecksum(path.to_path_buf()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, expected: FORMAT_VERSION });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(Error::CorruptChecksum(path.to_path_buf()));
        }
        let mut r = Reader { bytes: body, pos: 8, path };
        let meta_len = r.u64()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::malformed(path, e))?;
        let mut tensors = BTreeMap::new();
        while r.pos < body.len() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::malformed(path, e))?.to_string();
            let ndims = r.u32()? as usize;
            let dims = (0..ndims).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| Error::malformed(path, "tensor too large"))?;
            let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::malformed(path, "tensor too large"))?)?;
            let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            let t = Tensor::from_vec(&dims, data).map_err(|e| Error::malformed(path, e))?;
            tensors.insert(name, t);
        }
        if tensors.len() != meta.tensor_count {
            return Err(Error::malformed(path, format!("metadata lists {} tensors, file holds {}", meta.tensor_count, tensors.len())));
        }
        Ok(Self { meta, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::malformed(self.path, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, c.to_bytes()).map_err(Error::io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Checkpoint::from_bytes(&bytes, path)
}
