//! Minimal reader/writer for the safetensors container layout:
//! an 8-byte little-endian header length, a JSON header mapping tensor
//! names to `{dtype, shape, data_offsets}`, then raw little-endian bytes.
//!
//! F16 and BF16 tensors are widened to f32 on load; everything is written
//! back as F32.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::tensor::Matrix;

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

/// A parsed weight container: named tensors with shapes, all widened to f32.
#[derive(Debug)]
pub struct TensorFile {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

fn f16_to_f32(bits: u16) -> f32 {
    let sign = ((bits >> 15) & 1) as u32;
    let exp = ((bits >> 10) & 0x1f) as u32;
    let frac = (bits & 0x3ff) as u32;
    let out = if exp == 0 {
        if frac == 0 {
            sign << 31
        } else {
            // subnormal: renormalize
            let mut e = 127 - 15 + 1;
            let mut f = frac;
            while f & 0x400 == 0 {
                f <<= 1;
                e -= 1;
            }
            (sign << 31) | ((e as u32) << 23) | ((f & 0x3ff) << 13)
        }
    } else if exp == 0x1f {
        (sign << 31) | (0xff << 23) | (frac << 13)
    } else {
        (sign << 31) | ((exp + 127 - 15) << 23) | (frac << 13)
    };
    f32::from_bits(out)
}

fn bf16_to_f32(bits: u16) -> f32 {
    f32::from_bits((bits as u32) << 16)
}

impl TensorFile {
    pub fn read(path: &Path) -> Result<Self> {
        let p = path.display().to_string();
        let mut file = std::fs::File::open(path).map_err(|e| EngineError::io(&p, e))?;
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|e| EngineError::io(&p, e))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|e| EngineError::io(&p, e))?;
        let header: BTreeMap<String, serde_json::Value> = serde_json::from_slice(&header_bytes)
            .map_err(|e| EngineError::Container(format!("bad JSON header: {e}")))?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)
            .map_err(|e| EngineError::io(&p, e))?;

        let mut tensors = BTreeMap::new();
        for (name, value) in header {
            if name == "__metadata__" {
                continue;
            }
            let th: TensorHeader = serde_json::from_value(value).map_err(|e| {
                EngineError::Container(format!("bad header entry for `{name}`: {e}"))
            })?;
            let [start, end] = th.data_offsets;
            if end < start || end > data.len() {
                return Err(EngineError::Container(format!(
                    "tensor `{name}` has data offsets [{start}, {end}) outside the container"
                )));
            }
            let raw = &data[start..end];
            let n_elems: usize = th.shape.iter().product();
            let values = match th.dtype.as_str() {
                "F32" => {
                    if raw.len() != n_elems * 4 {
                        return Err(EngineError::Container(format!(
                            "tensor `{name}`: {} bytes for {} f32 elements",
                            raw.len(),
                            n_elems
                        )));
                    }
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect()
                }
                "F16" | "BF16" => {
                    if raw.len() != n_elems * 2 {
                        return Err(EngineError::Container(format!(
                            "tensor `{name}`: {} bytes for {} 16-bit elements",
                            raw.len(),
                            n_elems
                        )));
                    }
                    let widen = if th.dtype == "F16" {
                        f16_to_f32
                    } else {
                        bf16_to_f32
                    };
                    raw.chunks_exact(2)
                        .map(|c| widen(u16::from_le_bytes([c[0], c[1]])))
                        .collect()
                }
                other => {
                    return Err(EngineError::Container(format!(
                        "tensor `{name}` has unsupported dtype {other}"
                    )))
                }
            };
            tensors.insert(name, (th.shape, values));
        }
        Ok(Self { tensors })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    /// Removes and returns a tensor as a matrix with the expected 2-D shape.
    pub fn take_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let (shape, data) = self
            .tensors
            .remove(name)
            .ok_or_else(|| EngineError::MissingTensor(name.to_string()))?;
        if shape != [rows, cols] {
            return Err(EngineError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![rows, cols],
                actual: shape,
            });
        }
        let m = Matrix::from_vec(rows, cols, data);
        if let Some(idx) = m.first_non_finite() {
            return Err(EngineError::NonFinite {
                name: name.to_string(),
                index: idx,
            });
        }
        Ok(m)
    }

    /// Removes and returns a 1-D tensor of the expected length.
    pub fn take_vector(&mut self, name: &str, len: usize) -> Result<Vec<f32>> {
        let (shape, data) = self
            .tensors
            .remove(name)
            .ok_or_else(|| EngineError::MissingTensor(name.to_string()))?;
        if shape != [len] {
            return Err(EngineError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![len],
                actual: shape,
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite {
                name: name.to_string(),
                index: idx,
            });
        }
        Ok(data)
    }
}

/// Writes named f32 tensors in the safetensors layout.
///
/// Tensors are laid out in the order added; the JSON header lists them with
/// exact byte offsets so rereading is bit-exact.
pub struct TensorFileWriter {
    entries: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl TensorFileWriter {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: &[f32]) {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data mismatch for {name}"
        );
        self.entries
            .push((name.to_string(), shape, data.to_vec()));
    }

    pub fn add_matrix(&mut self, name: &str, m: &Matrix) {
        self.add(name, vec![m.rows, m.cols], &m.data);
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let p = path.display().to_string();
        let mut header = BTreeMap::new();
        let mut offset = 0usize;
        for (name, shape, data) in &self.entries {
            let nbytes = data.len() * 4;
            header.insert(
                name.clone(),
                TensorHeader {
                    dtype: "F32".to_string(),
                    shape: shape.clone(),
                    data_offsets: [offset, offset + nbytes],
                },
            );
            offset += nbytes;
        }
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| EngineError::Container(format!("header serialization: {e}")))?;
        let mut file = std::fs::File::create(path).map_err(|e| EngineError::io(&p, e))?;
        file.write_all(&(header_json.len() as u64).to_le_bytes())
            .map_err(|e| EngineError::io(&p, e))?;
        file.write_all(&header_json)
            .map_err(|e| EngineError::io(&p, e))?;
        let mut buf = Vec::with_capacity(1 << 20);
        for (_, _, data) in &self.entries {
            buf.clear();
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&buf).map_err(|e| EngineError::io(&p, e))?;
        }
        Ok(())
    }
}

impl Default for TensorFileWriter {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_f32_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let mut w = TensorFileWriter::new();
        w.add("a", vec![2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        w.add("b", vec![2], &[-0.5, 0.25]);
        w.write(&path).unwrap();

        let mut f = TensorFile::read(&path).unwrap();
        let a = f.take_matrix("a", 2, 3).unwrap();
        assert_eq!(a.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = f.take_vector("b", 2).unwrap();
        assert_eq!(b, vec![-0.5, 0.25]);
    }

    #[test]
    fn missing_tensor_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let mut w = TensorFileWriter::new();
        w.add("present", vec![1], &[1.0]);
        w.write(&path).unwrap();

        let mut f = TensorFile::read(&path).unwrap();
        let err = f.take_vector("absent", 1).unwrap_err();
        assert!(err.to_string().contains("absent"));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let mut w = TensorFileWriter::new();
        w.add("m", vec![2, 2], &[1.0, 2.0, 3.0, 4.0]);
        w.write(&path).unwrap();

        let mut f = TensorFile::read(&path).unwrap();
        match f.take_matrix("m", 4, 1) {
            Err(EngineError::ShapeMismatch { name, .. }) => assert_eq!(name, "m"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.safetensors");
        let mut w = TensorFileWriter::new();
        w.add("m", vec![2], &[1.0, f32::NAN]);
        w.write(&path).unwrap();

        let mut f = TensorFile::read(&path).unwrap();
        match f.take_vector("m", 2) {
            Err(EngineError::NonFinite { name, index }) => {
                assert_eq!(name, "m");
                assert_eq!(index, 1);
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn f16_widening() {
        // 1.0 in f16 is 0x3c00; -2.0 is 0xc000
        assert_eq!(f16_to_f32(0x3c00), 1.0);
        assert_eq!(f16_to_f32(0xc000), -2.0);
        assert_eq!(bf16_to_f32(0x3f80), 1.0);
    }
}
