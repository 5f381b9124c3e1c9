//! Deterministic on-disk array container.
//!
//! A container is a directory holding `manifest.json` (schema version, text
//! metadata, array table) and a single `data.bin` with every array's
//! row-major little-endian payload, each aligned to a 64-byte boundary.
//! Writing the same arrays and manifest twice produces identical bytes.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    I64,
}

impl Dtype {
    fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I64 => 8,
        }
    }
}

/// One named array: an n-dimensional shape over a flat payload.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::I64(_) => Dtype::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match self {
            ArrayData::F32(v) => Ok(v),
            _ => Err(Error::invalid("array is not f32")),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match self {
            ArrayData::I64(v) => Ok(v),
            _ => Err(Error::invalid("array is not i64")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        NamedArray { name: name.into(), shape, data: ArrayData::F32(data) }
    }

    pub fn i64(name: impl Into<String>, shape: Vec<usize>, data: Vec<i64>) -> Self {
        NamedArray { name: name.into(), shape, data: ArrayData::I64(data) }
    }

    pub fn from_array2_f32(name: impl Into<String>, arr: &ndarray::Array2<f32>) -> Self {
        let shape = vec![arr.nrows(), arr.ncols()];
        let data = arr.iter().copied().collect();
        NamedArray::f32(name, shape, data)
    }

    pub fn to_array2_f32(&self) -> Result<ndarray::Array2<f32>> {
        if self.shape.len() != 2 {
            return Err(Error::shape(format!(
                "array {:?} has shape {:?}, expected 2-d",
                self.name, self.shape
            )));
        }
        let v = self.as_f32()?.to_vec();
        ndarray::Array2::from_shape_vec((self.shape[0], self.shape[1]), v)
            .map_err(|e| Error::shape(e.to_string()))
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        self.data.as_f32()
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        self.data.as_i64()
    }
}

/// Named arrays plus free-form text metadata; the in-memory form of a
/// container directory.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArrayContainer {
    arrays: Vec<NamedArray>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: Dtype,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    metadata: BTreeMap<String, String>,
    arrays: Vec<ManifestEntry>,
}

impl ArrayContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, array: NamedArray) -> Result<()> {
        if self.arrays.iter().any(|a| a.name == array.name) {
            return Err(Error::invalid(format!("duplicate array name {:?}", array.name)));
        }
        let expected: usize = array.shape.iter().product();
        if expected != array.data.len() {
            return Err(Error::shape(format!(
                "array {:?}: shape {:?} implies {} elements, payload has {}",
                array.name,
                array.shape,
                expected,
                array.data.len()
            )));
        }
        if let ArrayData::F32(v) = &array.data {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("array {:?}", array.name)));
            }
        }
        self.arrays.push(array);
        Ok(())
    }

    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::MissingArray(name.to_string()))
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Write the container to `dir`, creating it if needed. Single-writer
    /// per path; existing container files are replaced atomically enough for
    /// test use (write then rename is not needed for a fresh dir).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut payload: Vec<u8> = Vec::new();
        let mut entries = Vec::with_capacity(self.arrays.len());
        for arr in &self.arrays {
            while payload.len() % ALIGN != 0 {
                payload.push(0);
            }
            let byte_offset = payload.len();
            match &arr.data {
                ArrayData::F32(v) => {
                    for x in v {
                        payload.extend_from_slice(&x.to_le_bytes());
                    }
                }
                ArrayData::I64(v) => {
                    for x in v {
                        payload.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
            entries.push(ManifestEntry {
                name: arr.name.clone(),
                dtype: arr.data.dtype(),
                shape: arr.shape.clone(),
                byte_offset,
                byte_len: payload.len() - byte_offset,
            });
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            metadata: self.metadata.clone(),
            arrays: entries,
        };
        let mut mf = fs::File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut mf, &manifest)?;
        mf.write_all(b"\n")?;
        fs::write(dir.join("data.bin"), &payload)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| {
            Error::CorruptContainer(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::CorruptContainer(format!("bad manifest: {e}")))?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: manifest.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let payload = fs::read(dir.join("data.bin"))?;
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        for entry in manifest.arrays {
            let expected: usize = entry.shape.iter().product();
            let width = entry.dtype.byte_width();
            if entry.byte_len != expected * width {
                return Err(Error::CorruptContainer(format!(
                    "array {:?}: shape {:?} needs {} bytes, manifest records {}",
                    entry.name,
                    entry.shape,
                    expected * width,
                    entry.byte_len
                )));
            }
            let end = entry.byte_offset.checked_add(entry.byte_len).ok_or_else(|| {
                Error::CorruptContainer(format!("array {:?}: offset overflow", entry.name))
            })?;
            if end > payload.len() {
                return Err(Error::CorruptContainer(format!(
                    "array {:?}: payload truncated ({} bytes present, {} required)",
                    entry.name,
                    payload.len(),
                    end
                )));
            }
            let bytes = &payload[entry.byte_offset..end];
            let data = match entry.dtype {
                Dtype::F32 => ArrayData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                ),
                Dtype::I64 => ArrayData::I64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| {
                            i64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                        })
                        .collect(),
                ),
            };
            arrays.push(NamedArray { name: entry.name, shape: entry.shape, data });
        }
        Ok(ArrayContainer { arrays, metadata: manifest.metadata })
    }
}

/// Concatenated bytes of a container's files, for hash-based comparisons.
pub fn container_bytes(dir: &Path) -> Result<Vec<u8>> {
    let mut out = fs::read(dir.join("manifest.json"))?;
    out.extend(fs::read(dir.join("data.bin"))?);
    Ok(out)
}
