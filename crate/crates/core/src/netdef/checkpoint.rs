//! Single-file checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! | offset      | size | content                                        |
//! |-------------|------|------------------------------------------------|
//! | 0           | 8    | magic `I3DCKPT\n`                              |
//! | 8           | 4    | format version (u32, currently 1)              |
//! | 12          | 8    | header length `L` (u64)                        |
//! | 20          | L    | UTF-8 JSON header: dtype, graph, metadata, tensor directory |
//! | 20 + L      | D    | raw tensor values, in directory order          |
//! | 20 + L + D  | 32   | SHA-256 of every preceding byte                |
//!
//! Directory entries carry `name`, `shape`, and `offset` (bytes from the
//! start of the data region).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dimensionality, GraphSpec, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"I3DCKPT\n";
const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 20;
const DIGEST_LEN: usize = 32;

/// Free-form provenance stored alongside the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: Option<usize>,
    pub dataset: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DirEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: DType,
    spec: GraphSpec,
    metadata: CheckpointMeta,
    tensors: Vec<DirEntry>,
}

#[derive(Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: GraphSpec,
    pub params: ParamSet<T>,
    pub meta: CheckpointMeta,
}

impl<T: Scalar> std::fmt::Debug for Checkpoint<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Checkpoint")
            .field("spec", &self.spec)
            .field("params", &self.params)
            .field("meta", &self.meta)
            .finish()
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(spec: GraphSpec, params: ParamSet<T>, meta: CheckpointMeta) -> Result<Self> {
        params.validate(&spec)?;
        Ok(Checkpoint { spec, params, meta })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::with_capacity(self.params.scalar_count() * T::DTYPE.size());
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            tensors.push(DirEntry { name: name.clone(), shape: t.shape().to_vec(), offset: data.len() });
            for &v in t.data() {
                v.write_le(&mut data);
            }
        }
        let header = serde_json::to_vec(&Header {
            dtype: T::DTYPE,
            spec: self.spec.clone(),
            metadata: self.meta.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + data.len() + DIGEST_LEN);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < PREFIX_LEN + DIGEST_LEN {
            return Err(corrupt("file is truncated"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic; not a checkpoint"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch; file is corrupt or truncated"));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let data_start = PREFIX_LEN
            .checked_add(header_len)
            .filter(|&end| end <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header: Header = serde_json::from_slice(&body[PREFIX_LEN..data_start])
            .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?} values but {:?} were requested",
                header.dtype,
                T::DTYPE
            )));
        }
        let data = &body[data_start..];
        let size = T::DTYPE.size();
        let mut params = ParamSet::new();
        let mut expected_offset = 0;
        for entry in header.tensors {
            let count: usize = entry.shape.iter().product();
            let end = entry.offset + count * size;
            if entry.offset != expected_offset || end > data.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` lies outside the data region", entry.name)));
            }
            let values = data[entry.offset..end].chunks_exact(size).map(T::read_le).collect();
            params.insert(entry.name, Tensor::new(entry.shape, values)?);
            expected_offset = end;
        }
        if expected_offset != data.len() {
            return Err(corrupt("trailing bytes after the last tensor"));
        }
        Checkpoint::new(header.spec, params, header.metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Reject checkpoints whose graph has the wrong dimensionality.
    pub fn expect_dimensionality(self, dim: Dimensionality) -> Result<Self> {
        if self.spec.dimensionality() != dim {
            return Err(Error::invalid(format!(
                "checkpoint holds a {} graph, a {dim} graph was expected",
                self.spec.dimensionality()
            )));
        }
        Ok(self)
    }
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    spec: &GraphSpec,
    params: &ParamSet<T>,
    meta: &CheckpointMeta,
) -> Result<()> {
    Checkpoint::new(spec.clone(), params.clone(), meta.clone())?.save(path)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    Checkpoint::load(path)
}
