//! `STNSR1` tensor files: one ASCII header line
//! `STNSR1 <f32|f64> <ndim> <dim0> ... <dimN>\n` followed by the raw
//! little-endian row-major values.

use std::fs;
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &str = "STNSR1";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut header = format!("{MAGIC} {} {}", T::DTYPE.as_str(), t.ndim());
    for d in t.shape() {
        header.push_str(&format!(" {d}"));
    }
    header.push('\n');
    let mut out = Vec::with_capacity(header.len() + t.numel() * T::DTYPE.size());
    out.extend_from_slice(header.as_bytes());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decode a buffer. Values stored with a different dtype than `T` are
/// converted (exact for f32 → f64).
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let bad = |msg: String| TensorError::Format { path: path.to_path_buf(), msg };
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not ASCII".into()))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(bad("bad magic".into()));
    }
    let dtype = fields.next().and_then(DType::parse).ok_or_else(|| bad("unknown dtype".into()))?;
    let ndim: usize = fields.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad ndim".into()))?;
    let shape: Vec<usize> =
        fields.map(|s| s.parse().map_err(|_| bad(format!("bad extent `{s}`")))).collect::<Result<_>>()?;
    if shape.len() != ndim || ndim == 0 {
        return Err(bad(format!("ndim {ndim} but {} extents", shape.len())));
    }
    let numel: usize = shape.iter().product();
    let body = &bytes[nl + 1..];
    if body.len() != numel * dtype.size() {
        return Err(bad(format!("expected {} payload bytes, found {}", numel * dtype.size(), body.len())));
    }
    let data: Vec<T> = match dtype {
        DType::F32 => body.chunks_exact(4).map(|c| T::from_f64(f32::read_le(c) as f64)).collect(),
        DType::F64 => body.chunks_exact(8).map(|c| T::from_f64(f64::read_le(c))).collect(),
    };
    Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|source| TensorError::Io { path: path.to_path_buf(), source })
}

pub fn read<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes, path)
}
