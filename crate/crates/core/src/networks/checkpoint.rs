//! Checkpoint directories: `manifest.json` plus one little-endian f32 blob
//! per named tensor.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, ModelBundle, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    architecture: Architecture,
    seed: u64,
    step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    dims: Vec<usize>,
}

fn blob_name(index: usize, name: &str) -> String {
    format!("{index:03}_{}.f32", name.replace(['/', '\\'], "_"))
}

fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let values: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(values.iter().flat_map(|v| v.to_le_bytes()).collect())
}

fn ck_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), message: message.into() }
}

impl ModelBundle {
    fn manifest(&self) -> Result<Manifest> {
        let tensors = self
            .params
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                Ok(TensorEntry {
                    name: name.clone(),
                    file: blob_name(i, name),
                    dims: self.params.get(name)?.dims().to_vec(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Manifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: self.architecture.clone(),
            seed: self.seed,
            step: self.step,
            tensors,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = self.manifest()?;
        for entry in &manifest.tensors {
            fs::write(dir.join(&entry.file), tensor_bytes(self.params.get(&entry.name)?)?)?;
        }
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
        Ok(dir.to_path_buf())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<ModelBundle> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST))
            .map_err(|e| ck_err(dir, format!("cannot read {MANIFEST}: {e}")))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(ck_err(dir, format!("unsupported format version {}", manifest.format_version)));
        }
        manifest.architecture.validate()?;
        let expected = manifest.architecture.parameter_count();
        let mut params = ParamStore { order: Vec::new(), vars: Default::default() };
        let mut total = 0;
        for entry in &manifest.tensors {
            let bytes = fs::read(dir.join(&entry.file))?;
            let n: usize = entry.dims.iter().product();
            if bytes.len() != 4 * n {
                return Err(ck_err(dir, format!("{} holds {} bytes, expected {}", entry.file, bytes.len(), 4 * n)));
            }
            let values: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::from_vec(values, entry.dims.as_slice(), &Device::Cpu)?;
            params.insert(entry.name.clone(), Var::from_tensor(&t)?);
            total += n;
        }
        if total != expected {
            return Err(ck_err(dir, format!("{total} parameters, architecture implies {expected}")));
        }
        Ok(ModelBundle {
            architecture: manifest.architecture,
            params,
            step: manifest.step,
            seed: manifest.seed,
        })
    }

    /// Canonical serialization: manifest JSON followed by every blob in order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.manifest()?)?;
        for name in self.params.names() {
            out.extend(tensor_bytes(self.params.get(name)?)?);
        }
        Ok(out)
    }

    /// SHA-256 of [`to_bytes`](Self::to_bytes), hex encoded.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
