//! KTAR array files.
//!
//! Layout: the 6-byte magic `KTAR1\n`, a little-endian `u32` header length,
//! a UTF-8 JSON header `{"dtype":..,"shape":[..],"order":"row-major"}` and
//! the raw little-endian payload in row-major order. Complex values are
//! interleaved `(re, im)` pairs. No padding, no checksum.

use std::fs;
use std::path::Path;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"KTAR1\n";
const MAX_ELEMENTS: u128 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    C64,
    C128,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::C64 | Dtype::F64 => 8,
            Dtype::C128 => 16,
            Dtype::F32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::C64 => "c64",
            Dtype::C128 => "c128",
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub order: String,
    /// Hash of the experiment configuration that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ArrayHeader {
    pub fn new(dtype: Dtype, shape: Vec<usize>) -> Self {
        Self {
            dtype,
            shape,
            order: "row-major".to_string(),
            config_hash: None,
        }
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn element_count(&self) -> Result<usize> {
        let n = self
            .shape
            .iter()
            .try_fold(1u128, |acc, &d| acc.checked_mul(d as u128))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Shape(format!("shape {:?} exceeds 2^40 elements", self.shape)))?;
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    C64(Vec<Complex32>),
    C128(Vec<Complex64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::C64(_) => Dtype::C64,
            ArrayData::C128(_) => Dtype::C128,
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::C64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_c128(self) -> Result<Vec<Complex64>> {
        match self {
            ArrayData::C128(v) => Ok(v),
            other => Err(Error::Dtype {
                expected: "c128",
                found: other.dtype().name().to_string(),
            }),
        }
    }

    pub fn into_f64(self) -> Result<Vec<f64>> {
        match self {
            ArrayData::F64(v) => Ok(v),
            other => Err(Error::Dtype {
                expected: "f64",
                found: other.dtype().name().to_string(),
            }),
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::C64(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
            ArrayData::C128(v) => v.iter().for_each(|c| {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }),
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_payload(dtype: Dtype, bytes: &[u8]) -> Self {
        let f32s = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
        let f64s = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        match dtype {
            Dtype::C64 => ArrayData::C64(
                bytes
                    .chunks_exact(8)
                    .map(|c| Complex32::new(f32s(&c[..4]), f32s(&c[4..])))
                    .collect(),
            ),
            Dtype::C128 => ArrayData::C128(
                bytes
                    .chunks_exact(16)
                    .map(|c| Complex64::new(f64s(&c[..8]), f64s(&c[8..])))
                    .collect(),
            ),
            Dtype::F32 => ArrayData::F32(bytes.chunks_exact(4).map(f32s).collect()),
            Dtype::F64 => ArrayData::F64(bytes.chunks_exact(8).map(f64s).collect()),
        }
    }
}

/// Serializes a header and payload to KTAR bytes.
pub fn encode(header: &ArrayHeader, data: &ArrayData) -> Result<Vec<u8>> {
    if header.dtype != data.dtype() {
        return Err(Error::Dtype {
            expected: header.dtype.name(),
            found: data.dtype().name().to_string(),
        });
    }
    let count = header.element_count()?;
    if count != data.len() {
        return Err(Error::Shape(format!(
            "header shape {:?} holds {count} elements, data has {}",
            header.shape,
            data.len()
        )));
    }
    let text = serde_json::to_string(header).expect("header serializes");
    let mut out = Vec::with_capacity(10 + text.len() + count * header.dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    data.write_payload(&mut out);
    Ok(out)
}

/// Parses KTAR bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(ArrayHeader, ArrayData)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 10 {
        return Err(truncated("missing header length".into()));
    }
    let hlen = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + hlen {
        return Err(truncated(format!(
            "header needs {hlen} bytes, only {} present",
            bytes.len() - 10
        )));
    }
    let text = std::str::from_utf8(&bytes[10..10 + hlen]).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let header: ArrayHeader = serde_json::from_str(text).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if header.order != "row-major" {
        return Err(Error::Header {
            path: path.to_path_buf(),
            detail: format!("unsupported order {:?}", header.order),
        });
    }
    let count = header.element_count()?;
    let payload = &bytes[10 + hlen..];
    let expected = count * header.dtype.size();
    if payload.len() != expected {
        return Err(Error::PayloadSizeMismatch {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let data = ArrayData::read_payload(header.dtype, payload);
    Ok((header, data))
}

pub fn write_array(path: impl AsRef<Path>, header: &ArrayHeader, data: &ArrayData) -> Result<()> {
    let bytes = encode(header, data)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_array(path: impl AsRef<Path>) -> Result<(ArrayHeader, ArrayData)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode(&bytes, path)
}
