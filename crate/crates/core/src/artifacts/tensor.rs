//! Dense f32 tensors and the TSR on-disk format.
//!
//! A `.tsr` file is one UTF-8 header line (a JSON object with `dtype`,
//! `shape`, `byte_order`, `format_version`) followed by a newline and the raw
//! row-major little-endian payload. Round-trips are bitwise exact, which the
//! freeze contracts elsewhere in the pipeline rely on.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TensorError;

/// Newest TSR format version this build can read.
pub const TSR_FORMAT_VERSION: u32 = 1;

/// A dense row-major f32 tensor with an immutable shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking the shape/data consistency and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                context: format!("element {i} of a new tensor with shape {shape:?}"),
            });
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Entry of a rank-2 tensor.
    pub fn at2(&self, row: usize, col: usize) -> f32 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// SHA-256 over the shape and the little-endian payload, hex-encoded.
    ///
    /// Two tensors hash equal iff their persisted TSR payloads would be
    /// byte-identical.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.shape.len() as u64).to_le_bytes());
        for dim in &self.shape {
            hasher.update((*dim as u64).to_le_bytes());
        }
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Widens to f64 for numeric work.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    /// Narrows f64 values into a tensor, validating finiteness.
    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, values.iter().map(|&v| v as f32).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TsrHeader {
    dtype: String,
    shape: Vec<usize>,
    byte_order: String,
    format_version: u32,
}

/// Reference to a persisted tensor artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: PathBuf,
    pub sha256: String,
}

/// Writes `tensor` to `path` in TSR format and returns its artifact reference.
pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<ArtifactRef, TensorError> {
    let header = TsrHeader {
        dtype: "f32".to_string(),
        shape: tensor.shape().to_vec(),
        byte_order: "little".to_string(),
        format_version: TSR_FORMAT_VERSION,
    };
    let header_line = serde_json::to_string(&header).expect("header serialization cannot fail");
    let mut bytes = Vec::with_capacity(header_line.len() + 1 + tensor.len() * 4);
    bytes.extend_from_slice(header_line.as_bytes());
    bytes.push(b'\n');
    for v in tensor.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| TensorError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut file = fs::File::create(path).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&bytes).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ArtifactRef {
        path: path.to_path_buf(),
        sha256: tensor.content_hash(),
    })
}

/// Loads a TSR tensor, failing loudly on malformed headers, unsupported
/// dtypes or versions, and payload size mismatches.
pub fn load_tensor(path: &Path) -> Result<Tensor, TensorError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| TensorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TensorError::CorruptHeader {
            path: path.to_path_buf(),
            reason: "no header line terminator".to_string(),
        })?;
    let header_text =
        std::str::from_utf8(&bytes[..newline]).map_err(|e| TensorError::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("header is not UTF-8: {e}"),
        })?;
    let header: TsrHeader =
        serde_json::from_str(header_text).map_err(|e| TensorError::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("header is not a valid JSON object: {e}"),
        })?;
    if header.format_version > TSR_FORMAT_VERSION {
        return Err(TensorError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: header.format_version,
            supported: TSR_FORMAT_VERSION,
        });
    }
    if header.dtype != "f32" {
        return Err(TensorError::UnsupportedDtype {
            path: path.to_path_buf(),
            dtype: header.dtype,
        });
    }
    if header.byte_order != "little" {
        return Err(TensorError::UnsupportedByteOrder {
            path: path.to_path_buf(),
            order: header.byte_order,
        });
    }
    let payload = &bytes[newline + 1..];
    let n_elems: usize = header.shape.iter().product();
    let expected = n_elems * 4;
    if payload.len() != expected {
        return Err(TensorError::SizeMismatch {
            path: path.to_path_buf(),
            shape: header.shape,
            expected,
            actual: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    // Bypass Tensor::new: persisted tensors may legitimately hold values a
    // caller stored; finiteness was checked at save time.
    Ok(Tensor {
        shape: header.shape,
        data,
    })
}
