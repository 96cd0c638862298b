//! Weight files: `SDDKIT1\n`, a little-endian `u32` manifest length, a JSON
//! manifest, then the little-endian `f32` payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::param::{Module, Slot};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SDDKIT1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    /// Snapshot of every param and buffer of `module`.
    pub fn from_module<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, meta: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        module.visit("", &mut |name, slot| {
            let t = match slot {
                Slot::Param(p) => p.value.cast::<f32>(),
                Slot::Buffer(b) => b.cast::<f32>(),
            };
            tensors.push((name.to_string(), t));
        });
        Checkpoint { tensors, meta }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
            });
            offset += t.len() * 4;
        }
        let manifest = serde_json::to_vec(&Manifest {
            tensors: entries,
            meta: self.meta.clone(),
        })?;
        let len = u32::try_from(manifest.len()).map_err(|_| Error::Checkpoint("manifest too large".into()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 4 + manifest.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&manifest);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("missing SDDKIT1 header".into()));
        }
        let mut len = [0u8; 4];
        len.copy_from_slice(&bytes[MAGIC.len()..MAGIC.len() + 4]);
        let start = MAGIC.len() + 4;
        let end = start + u32::from_le_bytes(len) as usize;
        let manifest: Manifest = serde_json::from_slice(
            bytes
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint("truncated manifest".into()))?,
        )?;
        let payload = &bytes[end..];
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            if e.dtype != "f32" {
                return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(e.offset..e.offset + n * 4)
                .ok_or_else(|| Error::Checkpoint(format!("{}: payload truncated", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((e.name, Tensor::from_vec(&e.shape, data)?));
        }
        Ok(Checkpoint {
            tensors,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies every tensor whose name passes `select` into `module`. A
    /// selected tensor that is missing or has a different shape is an error
    /// naming it. Returns the number of tensors restored.
    pub fn restore<T: Scalar, M: Module<T> + ?Sized>(
        &self,
        module: &mut M,
        select: &dyn Fn(&str) -> bool,
    ) -> Result<usize> {
        let mut restored = 0;
        let mut failure = None;
        module.visit("", &mut |name, slot| {
            if failure.is_some() || !select(name) {
                return;
            }
            let Some(src) = self.get(name) else {
                failure = Some(Error::Checkpoint(format!("tensor `{name}` not in checkpoint")));
                return;
            };
            let dst = match slot {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer(b) => b,
            };
            if dst.shape() != src.shape() {
                failure = Some(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?} in checkpoint but {:?} in model",
                    src.shape(),
                    dst.shape()
                )));
                return;
            }
            *dst = src.cast();
            restored += 1;
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(restored),
        }
    }
}
